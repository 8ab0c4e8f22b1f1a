//! Experiment plumbing behind the `vlstm` binary: the TOML experiment
//! config and one function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use vlstm_core::baselines::{self, LinearKernelForecaster};
use vlstm_core::cells::BiasMode;
use vlstm_core::data::{load_csv, make_windows, Split, SplitDates, Standardization, VolSeries, WindowedDataset};
use vlstm_core::kernels::{fit_exp_sum, KernelFit};
use vlstm_core::sweep::{
    convergence_ecdf, load_records, run_grid, run_one, summarize, write_summary_csvs, GridSpec,
    ReferenceRow, RunOutputs, RunRecord, RunSpec, SelectionRule, Summary, SweepOptions, Variant,
};
use vlstm_core::synthetic::VolPanel;
use vlstm_core::train::TrainConfig;

/// Grid axes as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Variant labels: `lstm`, `vlstm2`, `vlstm2-tied`, `msgru2`, ...
    pub variants: Vec<String>,
    pub bias: Vec<BiasMode>,
    pub hidden: Vec<usize>,
    pub t_seq: Vec<usize>,
    pub seeds: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            variants: g.variants.iter().map(Variant::to_string).collect(),
            bias: g.bias,
            hidden: g.hidden,
            t_seq: g.t_seq,
            seeds: g.seeds,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        let variants = self
            .variants
            .iter()
            .map(|v| v.parse::<Variant>())
            .collect::<Result<Vec<_>, _>>()?;
        let g = GridSpec {
            variants,
            bias: self.bias.clone(),
            hidden: self.hidden.clone(),
            t_seq: self.t_seq.clone(),
            seeds: self.seeds,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `date,symbol,rv[,ret]` CSV.
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Base seed; per-run seeds are derived from it and the run index.
    pub seed: u64,
    /// Sweep worker threads (`0` = one per core).
    pub parallelism: usize,
    /// Feed daily returns as a second input feature.
    pub use_returns: bool,
    pub splits: SplitDates,
    /// `train.seed` is ignored; each run derives its own shuffle seed.
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub selection: SelectionRule,
    /// Overrides the imported rough-volatility reference MSE.
    pub reference_mse: Option<f64>,
    pub baseline_timescales: Vec<f64>,
    /// Window length used for the baseline rows of the report.
    pub baseline_t_seq: usize,
    /// Save a model archive and epoch log for every sweep run.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            parallelism: 1,
            use_returns: false,
            splits: SplitDates::default(),
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            selection: SelectionRule::default(),
            reference_mse: None,
            baseline_timescales: baselines::default_timescales(),
            baseline_t_seq: 100,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        self.train.validate()?;
        self.grid.spec()?;
        ensure!(self.baseline_t_seq >= 1, "baseline_t_seq must be >= 1");
        if let Some(r) = self.reference_mse {
            ensure!(r.is_finite() && r > 0.0, "reference_mse must be positive");
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        let p = self
            .data
            .as_deref()
            .context("no data file configured (set `data` or pass --data)")?;
        ensure!(p.is_file(), "data file {} does not exist", p.display());
        Ok(p)
    }

    pub fn run_log(&self) -> PathBuf {
        self.output_dir.join("runs.jsonl")
    }

    /// Writes the resolved config next to the outputs.
    pub fn write_provenance(&self, name: &str) -> Result<()> {
        fs::create_dir_all(&self.output_dir)?;
        let text = toml::to_string_pretty(self)?;
        fs::write(self.output_dir.join(name), text)?;
        Ok(())
    }
}

/// Standardized datasets built from one CSV load.
pub struct Datasets {
    pub series: Vec<VolSeries>,
    cfg: ExperimentConfig,
}

impl Datasets {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg.data_path()?;
        let loaded = load_csv(path)?;
        if loaded.dropped > 0 {
            log::warn!("{}: dropped {} unusable rows", path.display(), loaded.dropped);
        }
        ensure!(!loaded.series.is_empty(), "{} holds no series", path.display());
        Ok(Self {
            series: loaded.series,
            cfg: cfg.clone(),
        })
    }

    pub fn windowed(&self, t_seq: usize) -> Result<(WindowedDataset, Standardization)> {
        let ds = make_windows(&self.series, t_seq, &self.cfg.splits, self.cfg.use_returns)?;
        ensure!(!ds.train.is_empty(), "no training windows for T_seq={t_seq}");
        ensure!(!ds.validation.is_empty(), "no validation windows for T_seq={t_seq}");
        Ok(ds.standardize()?)
    }
}

pub fn cmd_fit_kernel(alpha: f64, lo: f64, hi: f64, n: usize, out: &Path) -> Result<KernelFit> {
    let fit = fit_exp_sum(alpha, lo, hi, n)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, fit.kernel.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    Ok(fit)
}

/// One training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainArgs {
    pub variant: Variant,
    pub hidden: usize,
    pub t_seq: usize,
    pub bias: BiasMode,
    /// Run index, combined with the config seed.
    pub run: u64,
}

/// Trains one model. Writes `train/<run_id>.model`, the epoch log and a
/// one-line JSON record under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<RunRecord> {
    cfg.validate()?;
    let data = Datasets::load(cfg)?;
    let (ds, _) = data.windowed(args.t_seq)?;
    let spec = RunSpec {
        variant: args.variant,
        bias: args.bias,
        hidden: args.hidden,
        t_seq: args.t_seq,
        seed: args.run,
    };
    spec.model_config(ds.n_features).validate()?;
    let dir = cfg.output_dir.join("train");
    let outputs = RunOutputs {
        dir: dir.clone(),
        artifacts: true,
    };
    let rec = run_one(&spec, &ds, &cfg.train, cfg.seed, Some(&outputs));
    fs::create_dir_all(&dir)?;
    cfg.write_provenance("config.toml")?;
    let mut line = serde_json::to_string(&rec)?;
    line.push('\n');
    fs::write(dir.join(format!("{}.json", rec.run_id)), line)?;
    if rec.best_epoch == 0 {
        bail!(
            "training produced no usable model: {}",
            rec.error.as_deref().unwrap_or("unknown failure")
        );
    }
    Ok(rec)
}

/// Runs (or resumes) the configured grid into `runs.jsonl`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let grid = cfg.grid.spec()?;
    let data = Datasets::load(cfg)?;
    let mut datasets = BTreeMap::new();
    for &t in &grid.t_seq {
        datasets.insert(t, data.windowed(t)?.0);
    }
    cfg.write_provenance("config.toml")?;
    let opts = SweepOptions {
        train: cfg.train,
        base_seed: cfg.seed,
        parallelism: cfg.parallelism,
        run_log: Some(cfg.run_log()),
        outputs: Some(RunOutputs {
            dir: cfg.output_dir.join("models"),
            artifacts: cfg.save_models,
        }),
    };
    Ok(run_grid(&grid, &datasets, &opts)?)
}

fn read_log(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let path = cfg.run_log();
    ensure!(path.is_file(), "run log {} does not exist", path.display());
    let records = load_records(&path)?;
    ensure!(!records.is_empty(), "run log {} is empty", path.display());
    Ok(records)
}

/// Selection outcome for one (variant, bias) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub variant: String,
    pub bias: BiasMode,
    pub runs: usize,
    pub threshold: Option<f64>,
    pub selected: Vec<String>,
}

/// Applies the configured selection rule per (variant, bias) and writes
/// `selection.json`.
pub fn cmd_select(cfg: &ExperimentConfig) -> Result<Vec<GroupSelection>> {
    let records = read_log(cfg)?;
    let summary = summarize(&records, cfg.selection);
    let out: Vec<GroupSelection> = summary
        .table
        .iter()
        .map(|row| GroupSelection {
            variant: row.variant.clone(),
            bias: row.bias,
            runs: row.runs,
            threshold: row.threshold,
            selected: records
                .iter()
                .filter(|r| r.variant().to_string() == row.variant && r.bias == row.bias)
                .filter(|r| summary.selected.contains(&r.run_id))
                .map(|r| r.run_id.clone())
                .collect(),
        })
        .collect();
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join("selection.json"),
        serde_json::to_string_pretty(&out)?,
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub t_seq: usize,
    pub persistence_val: f64,
    pub persistence_test: Option<f64>,
    pub linear_val: f64,
    pub linear_test: Option<f64>,
    pub linear: LinearKernelForecaster,
}

/// Persistence and EMA-bank regression scored on the validation and test
/// splits; writes `baseline.json` and per-split prediction CSVs.
pub fn cmd_baseline(cfg: &ExperimentConfig, t_seq: usize) -> Result<BaselineReport> {
    cfg.validate()?;
    let data = Datasets::load(cfg)?;
    let (ds, _) = data.windowed(t_seq)?;
    let linear = baselines::fit_on_train(&ds, &cfg.baseline_timescales)?;
    let dir = cfg.output_dir.join("baseline");
    fs::create_dir_all(&dir)?;
    let mut scores = BTreeMap::new();
    for split in [Split::Validation, Split::Test] {
        let targets = &ds.split(split).targets;
        if targets.is_empty() {
            continue;
        }
        let p = baselines::predictions(&ds, split, baselines::persistence_forecast)?;
        let l = baselines::predictions(&ds, split, |w| linear.predict(w))?;
        for (name, preds) in [("persistence", &p), ("linear_kernel", &l)] {
            let f = fs::File::create(dir.join(format!("{name}_{}.csv", split.as_str())))?;
            baselines::write_predictions_csv(&ds, split, preds, f)?;
        }
        scores.insert(
            split,
            (baselines::mse(&p, targets)?, baselines::mse(&l, targets)?),
        );
    }
    let val = scores[&Split::Validation];
    let test = scores.get(&Split::Test);
    let report = BaselineReport {
        t_seq,
        persistence_val: val.0,
        persistence_test: test.map(|s| s.0),
        linear_val: val.1,
        linear_test: test.map(|s| s.1),
        linear,
    };
    fs::write(dir.join("baseline.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Summary CSVs for the run log, with baseline and reference rows.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let records = read_log(cfg)?;
    let summary = summarize(&records, cfg.selection);
    let ecdf = convergence_ecdf(&records, cfg.train.max_epochs);
    let mut refs = vec![ReferenceRow {
        name: "rough_vol_reference".into(),
        test_mse: baselines::reference_mse(cfg.reference_mse),
        note: "imported constant".into(),
    }];
    match cfg.data.as_ref().map(|_| cmd_baseline(cfg, cfg.baseline_t_seq)) {
        Some(Ok(b)) => {
            for (name, mse) in [
                ("persistence", b.persistence_test),
                ("linear_kernel", b.linear_test),
            ] {
                if let Some(m) = mse {
                    refs.push(ReferenceRow {
                        name: name.into(),
                        test_mse: m,
                        note: format!("T_seq={}", b.t_seq),
                    });
                }
            }
        }
        Some(Err(e)) => log::warn!("baseline rows skipped: {e:#}"),
        None => log::warn!("no data file configured; baseline rows skipped"),
    }
    write_summary_csvs(&cfg.output_dir.join("report"), &summary, &ecdf, &refs)?;
    Ok(summary)
}

/// Writes a synthetic long-memory panel CSV.
pub fn cmd_synth(panel: &VolPanel, seed: u64, out: &Path) -> Result<()> {
    let series = panel.generate(seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let f = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    vlstm_core::data::write_csv(&series, f)?;
    Ok(())
}
