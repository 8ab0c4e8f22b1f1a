//! Experiment grids, run records, model selection and summaries.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{Architecture, BiasMode, CellConfig, GateCoupling};
use crate::data::{Split, WindowedDataset};
use crate::error::{invalid, Error, Result};
use crate::model::{ForecastModel, ModelConfig};
use crate::train::{evaluate, train_model, StopReason, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Architecture family plus its timescale structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub arch: Architecture,
    pub scales: usize,
    pub coupling: GateCoupling,
}

impl Variant {
    pub fn lstm() -> Self {
        Self {
            arch: Architecture::Lstm,
            scales: 1,
            coupling: GateCoupling::Independent,
        }
    }

    pub fn vlstm(scales: usize, coupling: GateCoupling) -> Self {
        Self {
            arch: Architecture::Vlstm,
            scales,
            coupling,
        }
    }

    pub fn msgru(scales: usize) -> Self {
        Self {
            arch: Architecture::MsGru,
            scales,
            coupling: GateCoupling::Independent,
        }
    }

    pub fn cell(&self, n_inputs: usize, hidden: usize, bias: BiasMode) -> CellConfig {
        CellConfig {
            arch: self.arch,
            n_inputs,
            hidden,
            scales: self.scales,
            bias,
            coupling: self.coupling,
        }
    }
}

impl fmt::Display for Variant {
    /// `lstm`, `vlstm2`, `vlstm2-tied`, `msgru2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.arch {
            Architecture::Lstm => write!(f, "lstm"),
            _ => {
                write!(f, "{}{}", self.arch, self.scales)?;
                if self.coupling == GateCoupling::Tied {
                    write!(f, "-tied")?;
                }
                Ok(())
            }
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    /// Inverse of `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "lstm" {
            return Ok(Self::lstm());
        }
        let (body, coupling) = match s.strip_suffix("-tied") {
            Some(b) => (b, GateCoupling::Tied),
            None => (s.as_str(), GateCoupling::Independent),
        };
        let split = body
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| invalid(format!("variant `{s}` needs a scale count, e.g. vlstm2")))?;
        let scales: usize = body[split..]
            .parse()
            .map_err(|_| invalid(format!("bad scale count in variant `{s}`")))?;
        let v = match &body[..split] {
            "vlstm" => Self::vlstm(scales, coupling),
            "msgru" if coupling == GateCoupling::Independent => Self::msgru(scales),
            _ => return Err(invalid(format!("unknown variant `{s}`"))),
        };
        if scales == 0 {
            return Err(invalid("variant needs at least one scale"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub variants: Vec<Variant>,
    pub bias: Vec<BiasMode>,
    pub hidden: Vec<usize>,
    pub t_seq: Vec<usize>,
    /// Seeds `0..seeds` per cell.
    pub seeds: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            variants: vec![Variant::lstm(), Variant::vlstm(2, GateCoupling::Independent)],
            bias: vec![BiasMode::On, BiasMode::Off],
            hidden: (1..=5).collect(),
            t_seq: vec![10, 25, 40, 55, 70, 85, 100],
            seeds: 20,
        }
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunSpec {
    pub variant: Variant,
    pub bias: BiasMode,
    pub hidden: usize,
    pub t_seq: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!(
            "{}-bias_{}-nh{}-t{}-seed{}",
            self.variant, self.bias, self.hidden, self.t_seq, self.seed
        )
    }

    pub fn model_config(&self, n_inputs: usize) -> ModelConfig {
        ModelConfig {
            cell: self.variant.cell(n_inputs, self.hidden, self.bias),
            t_seq: self.t_seq,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty()
            || self.bias.is_empty()
            || self.hidden.is_empty()
            || self.t_seq.is_empty()
            || self.seeds == 0
        {
            return Err(invalid("every grid axis needs at least one value"));
        }
        for v in &self.variants {
            v.cell(1, 1, BiasMode::On).validate()?;
        }
        if self.hidden.contains(&0) || self.t_seq.contains(&0) {
            return Err(invalid("N_h and T_seq must be >= 1"));
        }
        Ok(())
    }

    /// Hyperparameter combinations per variant (bias × N_h × T_seq).
    pub fn variations_per_variant(&self) -> usize {
        self.bias.len() * self.hidden.len() * self.t_seq.len()
    }

    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &variant in &self.variants {
            for &bias in &self.bias {
                for &hidden in &self.hidden {
                    for &t_seq in &self.t_seq {
                        for seed in 0..self.seeds {
                            out.push(RunSpec {
                                variant,
                                bias,
                                hidden,
                                t_seq,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed of `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// Seeds for parameter initialization and batch shuffling of one run.
/// They depend only on the base seed and the grid seed, so architectures
/// compared at the same seed share both streams.
pub fn run_seeds(base: u64, seed: u64) -> (u64, u64) {
    let s = derive_seed(base, seed);
    (derive_seed(s, 0), derive_seed(s, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub architecture: Architecture,
    pub bias: BiasMode,
    pub coupling: GateCoupling,
    pub n_scales: usize,
    pub hidden: usize,
    pub t_seq: usize,
    pub seed: u64,
    pub base_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub clip_events: usize,
    pub wall_time_s: f64,
    /// Model archive path relative to the output directory.
    pub archive: Option<String>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn variant(&self) -> Variant {
        Variant {
            arch: self.architecture,
            scales: self.n_scales,
            coupling: self.coupling,
        }
    }

    pub fn spec(&self) -> RunSpec {
        RunSpec {
            variant: self.variant(),
            bias: self.bias,
            hidden: self.hidden,
            t_seq: self.t_seq,
            seed: self.seed,
        }
    }

    /// Epoch count used for convergence statistics: runs that never
    /// triggered early stopping count at the epoch cap.
    pub fn convergence_epoch(&self, max_epochs: usize) -> usize {
        if self.converged {
            self.epochs_run
        } else {
            max_epochs
        }
    }

    /// JSON line with the wall time zeroed, for run-to-run comparison.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        Ok(serde_json::to_string(&r)?)
    }

    fn from_spec(spec: &RunSpec, base_seed: u64) -> Self {
        let (init_seed, shuffle_seed) = run_seeds(base_seed, spec.seed);
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: spec.run_id(),
            architecture: spec.variant.arch,
            bias: spec.bias,
            coupling: spec.variant.coupling,
            n_scales: spec.variant.scales,
            hidden: spec.hidden,
            t_seq: spec.t_seq,
            seed: spec.seed,
            base_seed,
            init_seed,
            shuffle_seed,
            train_loss: None,
            val_loss: None,
            test_loss: None,
            epochs_run: 0,
            best_epoch: 0,
            converged: false,
            stop_reason: None,
            clip_events: 0,
            wall_time_s: 0.0,
            archive: None,
            error: None,
        }
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    /// Also write `<run_id>.model` and `<run_id>.epochs.csv`.
    pub artifacts: bool,
}

/// Trains and scores one grid cell. Training failures are reported in the
/// record rather than as an error.
pub fn run_one(
    spec: &RunSpec,
    data: &WindowedDataset,
    train: &TrainConfig,
    base_seed: u64,
    outputs: Option<&RunOutputs>,
) -> RunRecord {
    let started = Instant::now();
    let mut rec = RunRecord::from_spec(spec, base_seed);
    let cfg = TrainConfig {
        seed: rec.shuffle_seed,
        ..*train
    };
    let outcome = (|| -> Result<()> {
        let model = ForecastModel::init(spec.model_config(data.n_features), rec.init_seed)?;
        let res = train_model(&model, data, &cfg)?;
        rec.epochs_run = res.epochs_run;
        rec.best_epoch = res.best_epoch;
        rec.converged = res.converged;
        rec.stop_reason = Some(res.stop_reason);
        rec.clip_events = res.clip_events;
        rec.error = res.diagnostic.clone();
        if res.best_epoch > 0 {
            rec.train_loss = Some(evaluate(&res.final_model, data, Split::Train)?);
            rec.val_loss = Some(res.best_val_loss);
            if !data.test.is_empty() {
                rec.test_loss = Some(evaluate(&res.final_model, data, Split::Test)?);
            }
        }
        if let Some(out) = outputs.filter(|o| o.artifacts) {
            std::fs::create_dir_all(&out.dir)?;
            let name = format!("{}.model", rec.run_id);
            res.final_model.save(&out.dir.join(&name))?;
            std::fs::write(
                out.dir.join(format!("{}.epochs.csv", rec.run_id)),
                res.log_csv()?,
            )?;
            rec.archive = Some(name);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        rec.converged = false;
        rec.error = Some(e.to_string());
    }
    rec.wall_time_s = started.elapsed().as_secs_f64();
    rec
}

/// Reads a JSON-lines run log. A malformed final line (an interrupted
/// append) is skipped; malformed lines elsewhere are errors.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path)?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) if r.schema_version == SCHEMA_VERSION => out.push(r),
            Ok(r) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: format!("unsupported schema version {}", r.schema_version),
                })
            }
            Err(_) if Some(i) == last => {
                log::warn!("{}: ignoring truncated final line", path.display());
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Appends records to a JSON-lines log, one write and sync per record.
pub struct RecordLog {
    file: Mutex<File>,
}

impl RecordLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        // a previous interrupted append may have left a partial line
        if let Ok(bytes) = std::fs::read(path) {
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
                std::fs::write(path, &bytes[..keep])?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, rec: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        let mut f = self.file.lock().expect("record log poisoned");
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub train: TrainConfig,
    pub base_seed: u64,
    /// Worker threads; `0` means one per available core.
    pub parallelism: usize,
    /// JSON-lines log; existing records there are not recomputed.
    pub run_log: Option<PathBuf>,
    pub outputs: Option<RunOutputs>,
}

/// Runs every grid cell not already in the log and returns all records
/// for the grid in grid order. `datasets` must hold one dataset per T_seq.
pub fn run_grid(
    grid: &GridSpec,
    datasets: &BTreeMap<usize, WindowedDataset>,
    opts: &SweepOptions,
) -> Result<Vec<RunRecord>> {
    grid.validate()?;
    opts.train.validate()?;
    for t in &grid.t_seq {
        let ds = datasets
            .get(t)
            .ok_or_else(|| invalid(format!("no dataset for T_seq={t}")))?;
        if ds.t_seq != *t {
            return Err(invalid(format!("dataset keyed {t} has T_seq={}", ds.t_seq)));
        }
    }
    let specs = grid.runs();
    let wanted: HashSet<String> = specs.iter().map(RunSpec::run_id).collect();
    let mut done: BTreeMap<String, RunRecord> = BTreeMap::new();
    let log = match &opts.run_log {
        Some(path) => {
            if path.exists() {
                for r in load_records(path)? {
                    if wanted.contains(&r.run_id) {
                        done.insert(r.run_id.clone(), r);
                    }
                }
            }
            Some(RecordLog::open(path)?)
        }
        None => None,
    };
    let todo: Vec<&RunSpec> = specs
        .iter()
        .filter(|s| !done.contains_key(&s.run_id()))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let fresh: Vec<RunRecord> = pool.install(|| {
        todo.par_iter()
            .map(|spec| -> Result<RunRecord> {
                let rec = run_one(
                    spec,
                    &datasets[&spec.t_seq],
                    &opts.train,
                    opts.base_seed,
                    opts.outputs.as_ref(),
                );
                if let Some(log) = &log {
                    log.append(&rec)?;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for r in fresh {
        done.insert(r.run_id.clone(), r);
    }
    let mut out: Vec<RunRecord> = done.into_values().collect();
    out.sort_by_key(RunRecord::spec);
    Ok(out)
}

/// Linear-interpolation quantile at position `1 + (N−1)p` of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile levels `0.1, 0.2, …, 0.9`.
pub fn decile_levels() -> [f64; 9] {
    std::array::from_fn(|j| (j + 1) as f64 / 10.0)
}

/// Gaps within this relative distance of the largest count as ties.
pub const GAP_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub threshold: f64,
    /// Indices into the input, ascending.
    pub selected: Vec<usize>,
    /// `q(0.1) … q(0.9)`.
    pub quantiles: Vec<f64>,
    /// `j` such that the largest gap is `q[j+1] − q[j]`; the threshold is `q[j]`.
    pub max_gap_index: usize,
}

/// Keeps the runs below the lower edge of the largest jump between
/// consecutive deciles; ties go to the larger quantile.
pub fn quantile_gap_select(losses: &[f64]) -> Result<SelectionResult> {
    if losses.len() < 10 {
        return Err(invalid(format!(
            "quantile-gap selection needs >= 10 losses, got {}",
            losses.len()
        )));
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("loss #{i} is {}", losses[i])));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q: Vec<f64> = decile_levels()
        .iter()
        .map(|&p| quantile_sorted(&sorted, p))
        .collect();
    let scale = q.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let gaps: Vec<f64> = q.windows(2).map(|w| w[1] - w[0]).collect();
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = gaps
        .iter()
        .rposition(|&g| g >= max_gap - GAP_TIE_TOLERANCE * scale)
        .expect("nine quantiles give eight gaps");
    let threshold = q[best];
    Ok(SelectionResult {
        threshold,
        selected: (0..losses.len()).filter(|&i| losses[i] <= threshold).collect(),
        quantiles: q,
        max_gap_index: best,
    })
}

/// Keeps the runs with loss strictly below the sample mean.
pub fn below_average_select(losses: &[f64]) -> Result<SelectionResult> {
    if losses.is_empty() {
        return Err(Error::Empty("no losses to select from".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("losses".into()));
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SelectionResult {
        threshold: mean,
        selected: (0..losses.len()).filter(|&i| losses[i] < mean).collect(),
        quantiles: decile_levels().iter().map(|&p| quantile_sorted(&sorted, p)).collect(),
        max_gap_index: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    QuantileGap,
    BelowAverage,
}

impl SelectionRule {
    pub fn apply(self, losses: &[f64]) -> Result<SelectionResult> {
        match self {
            SelectionRule::QuantileGap => quantile_gap_select(losses),
            SelectionRule::BelowAverage => below_average_select(losses),
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "quantile_gap" => Ok(Self::QuantileGap),
            "below_average" => Ok(Self::BelowAverage),
            other => Err(invalid(format!("unknown selection rule `{other}`"))),
        }
    }
}

/// Lowest-validation-loss record per (variant, bias, N_h, T_seq), ties to
/// the lower seed. Records without a validation loss are ignored.
pub fn best_by_validation(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut best: BTreeMap<(Variant, BiasMode, usize, usize), &RunRecord> = BTreeMap::new();
    for r in records {
        let Some(v) = r.val_loss.filter(|v| v.is_finite()) else {
            continue;
        };
        let key = (r.variant(), r.bias, r.hidden, r.t_seq);
        match best.get(&key) {
            Some(b) if (b.val_loss.unwrap(), b.seed) <= (v, r.seed) => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    best.into_values().collect()
}

/// Streaming mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    pub fn std(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.m2 / self.n as f64).sqrt())
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        for x in iter {
            w.push(x);
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub bias: BiasMode,
    pub runs: usize,
    pub selected: usize,
    pub threshold: Option<f64>,
    pub mean_test: Option<f64>,
    pub std_test: Option<f64>,
    pub mean_val: Option<f64>,
    /// Mean test loss of the best-by-validation model of each (N_h, T_seq).
    pub best_by_val_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub variant: String,
    pub bias: BiasMode,
    /// N_h or T_seq, depending on the slice.
    pub value: usize,
    pub selected: usize,
    pub mean_test: Option<f64>,
    pub std_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub table: Vec<SummaryRow>,
    pub loss_vs_nh: Vec<SliceRow>,
    pub loss_vs_tseq: Vec<SliceRow>,
    /// Run ids kept by the selection rule.
    pub selected: BTreeSet<String>,
}

type GroupKey = (Variant, BiasMode);

fn groups(records: &[RunRecord]) -> BTreeMap<GroupKey, Vec<&RunRecord>> {
    let mut g: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        g.entry((r.variant(), r.bias)).or_default().push(r);
    }
    for v in g.values_mut() {
        v.sort_by_key(|r| r.spec());
    }
    g
}

/// Per (variant, bias): selection over the validation losses of all its
/// runs, then test-loss statistics of the selected runs overall and per
/// N_h and T_seq. Groups where selection is impossible report `None`.
pub fn summarize(records: &[RunRecord], rule: SelectionRule) -> Summary {
    let mut table = Vec::new();
    let mut by_nh = Vec::new();
    let mut by_t = Vec::new();
    let mut selected_ids = BTreeSet::new();
    for ((variant, bias), runs) in groups(records) {
        let scored: Vec<&RunRecord> = runs
            .iter()
            .copied()
            .filter(|r| r.val_loss.is_some_and(f64::is_finite))
            .collect();
        let losses: Vec<f64> = scored.iter().map(|r| r.val_loss.unwrap()).collect();
        let selection = rule.apply(&losses).ok();
        let kept: Vec<&RunRecord> = selection
            .as_ref()
            .map(|s| s.selected.iter().map(|&i| scored[i]).collect())
            .unwrap_or_default();
        selected_ids.extend(kept.iter().map(|r| r.run_id.clone()));
        let tests = |rs: &mut dyn Iterator<Item = &&RunRecord>| -> Welford {
            rs.filter_map(|r| r.test_loss.filter(|t| t.is_finite())).collect()
        };
        let w = tests(&mut kept.iter());
        let val: Welford = kept.iter().filter_map(|r| r.val_loss).collect();
        let owned: Vec<RunRecord> = runs.iter().map(|r| (*r).clone()).collect();
        let bbv: Welford = best_by_validation(&owned)
            .iter()
            .filter_map(|r| r.test_loss)
            .collect();
        let label = variant.to_string();
        table.push(SummaryRow {
            variant: label.clone(),
            bias,
            runs: runs.len(),
            selected: kept.len(),
            threshold: selection.as_ref().map(|s| s.threshold),
            mean_test: w.mean(),
            std_test: w.std(),
            mean_val: val.mean(),
            best_by_val_test: bbv.mean(),
        });
        let slice = |key: fn(&RunRecord) -> usize, out: &mut Vec<SliceRow>| {
            let values: BTreeSet<usize> = runs.iter().map(|r| key(r)).collect();
            for value in values {
                let w = tests(&mut kept.iter().filter(|r| key(r) == value));
                out.push(SliceRow {
                    variant: label.clone(),
                    bias,
                    value,
                    selected: kept.iter().filter(|r| key(r) == value).count(),
                    mean_test: w.mean(),
                    std_test: w.std(),
                });
            }
        };
        slice(|r| r.hidden, &mut by_nh);
        slice(|r| r.t_seq, &mut by_t);
    }
    Summary {
        table,
        loss_vs_nh: by_nh,
        loss_vs_tseq: by_t,
        selected: selected_ids,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfSeries {
    pub variant: String,
    pub bias: BiasMode,
    /// `(epochs, fraction of runs converged by then)`, epochs ascending.
    pub points: Vec<(usize, f64)>,
}

impl EcdfSeries {
    /// Fraction of runs whose convergence epoch is `<= epochs`.
    pub fn at(&self, epochs: usize) -> f64 {
        self.points
            .iter()
            .take_while(|(e, _)| *e <= epochs)
            .last()
            .map_or(0.0, |p| p.1)
    }
}

/// ECDF of convergence epochs per (variant, bias); runs that never
/// stopped early count at `max_epochs`.
pub fn convergence_ecdf(records: &[RunRecord], max_epochs: usize) -> Vec<EcdfSeries> {
    groups(records)
        .into_iter()
        .map(|((variant, bias), runs)| {
            let mut e: Vec<usize> = runs.iter().map(|r| r.convergence_epoch(max_epochs)).collect();
            e.sort_unstable();
            let n = e.len() as f64;
            let mut points: Vec<(usize, f64)> = Vec::new();
            for (i, &x) in e.iter().enumerate() {
                let frac = (i + 1) as f64 / n;
                match points.last_mut() {
                    Some(last) if last.0 == x => last.1 = frac,
                    _ => points.push((x, frac)),
                }
            }
            EcdfSeries {
                variant: variant.to_string(),
                bias,
                points,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Extra rows for the summary table (baselines, imported references).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub name: String,
    pub test_mse: f64,
    pub note: String,
}

/// Writes `summary_table.csv`, `ecdf.csv`, `loss_vs_nh.csv` and
/// `loss_vs_tseq.csv` into `dir`; missing statistics are empty cells.
pub fn write_summary_csvs(
    dir: &Path,
    summary: &Summary,
    ecdf: &[EcdfSeries],
    references: &[ReferenceRow],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary_table.csv"))?;
    w.write_record([
        "model",
        "bias",
        "runs",
        "selected",
        "threshold",
        "mean_test_mse",
        "std_test_mse",
        "mean_val_mse",
        "best_by_val_test_mse",
        "note",
    ])?;
    for r in &summary.table {
        w.write_record([
            r.variant.clone(),
            r.bias.to_string(),
            r.runs.to_string(),
            r.selected.to_string(),
            opt(r.threshold),
            opt(r.mean_test),
            opt(r.std_test),
            opt(r.mean_val),
            opt(r.best_by_val_test),
            String::new(),
        ])?;
    }
    for r in references {
        w.write_record([
            r.name.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("{}", r.test_mse),
            String::new(),
            String::new(),
            String::new(),
            r.note.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("ecdf.csv"))?;
    w.write_record(["model", "bias", "epochs", "fraction_converged"])?;
    for s in ecdf {
        for (e, f) in &s.points {
            w.write_record([s.variant.clone(), s.bias.to_string(), e.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;

    for (file, col, rows) in [
        ("loss_vs_nh.csv", "hidden", &summary.loss_vs_nh),
        ("loss_vs_tseq.csv", "t_seq", &summary.loss_vs_tseq),
    ] {
        let mut w = csv::Writer::from_path(dir.join(file))?;
        w.write_record(["model", "bias", col, "selected", "mean_test_mse", "std_test_mse"])?;
        for r in rows {
            w.write_record([
                r.variant.clone(),
                r.bias.to_string(),
                r.value.to_string(),
                r.selected.to_string(),
                opt(r.mean_test),
                opt(r.std_test),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
