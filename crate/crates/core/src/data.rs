//! Realized-volatility ingest, date splits and windowing.
//!
//! Input CSV has a header with at least `date,symbol,rv` (ISO dates,
//! realized variance); an optional `ret` column carries the daily log
//! return used as a second input feature when enabled.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct VolSeries {
    pub symbol: String,
    pub dates: Vec<NaiveDate>,
    pub rv: Vec<f64>,
    /// Daily log returns aligned with `dates`, when the file has them.
    pub ret: Option<Vec<f64>>,
}

impl VolSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    /// One series per symbol, symbols ascending.
    pub series: Vec<VolSeries>,
    /// Rows dropped for missing or nonpositive rv.
    pub dropped: usize,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_csv(path: &Path) -> Result<LoadedSeries> {
    let file = std::fs::File::open(path)?;
    read_csv(file, path)
}

/// Parses CSV from any reader; `path` only labels error messages.
pub fn read_csv(reader: impl Read, path: &Path) -> Result<LoadedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ci_date), Some(ci_sym), Some(ci_rv)) = (col("date"), col("symbol"), col("rv")) else {
        return Err(parse_err(path, 1, "header must contain date,symbol,rv"));
    };
    let ci_ret = col("ret");

    type Row = (NaiveDate, f64, Option<f64>);
    let mut by_symbol: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(ci_date), "%Y-%m-%d")
            .map_err(|e| parse_err(path, line, format!("bad date `{}`: {e}", field(ci_date))))?;
        let symbol = field(ci_sym);
        if symbol.is_empty() {
            return Err(parse_err(path, line, "empty symbol"));
        }
        let rv_text = field(ci_rv);
        let rv = if rv_text.is_empty() || rv_text.eq_ignore_ascii_case("nan") {
            None
        } else {
            Some(
                rv_text
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, line, format!("bad rv `{rv_text}`: {e}")))?,
            )
        };
        let ret = match ci_ret.map(field) {
            None | Some("") => None,
            Some(t) => Some(
                t.parse::<f64>()
                    .map_err(|e| parse_err(path, line, format!("bad ret `{t}`: {e}")))?,
            ),
        };
        match rv {
            Some(v) if v > 0.0 && v.is_finite() && ret.map_or(true, f64::is_finite) => {
                by_symbol
                    .entry(symbol.to_string())
                    .or_default()
                    .push((date, v, ret));
            }
            _ => dropped += 1,
        }
    }

    let mut series = Vec::with_capacity(by_symbol.len());
    for (symbol, mut rows) in by_symbol {
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(parse_err(
                path,
                0,
                format!("duplicate date {} for symbol {symbol}", w[0].0),
            ));
        }
        let ret = if ci_ret.is_some() && rows.iter().all(|r| r.2.is_some()) {
            Some(rows.iter().map(|r| r.2.unwrap()).collect())
        } else {
            None
        };
        series.push(VolSeries {
            symbol,
            dates: rows.iter().map(|r| r.0).collect(),
            rv: rows.iter().map(|r| r.1).collect(),
            ret,
        });
    }
    if series.is_empty() {
        return Err(Error::Empty(format!("no usable rows in {}", path.display())));
    }
    Ok(LoadedSeries { series, dropped })
}

/// Writes series in the `date,symbol,rv[,ret]` layout accepted by [`read_csv`].
pub fn write_csv(series: &[VolSeries], w: impl Write) -> Result<()> {
    let with_ret = series.iter().all(|s| s.ret.is_some()) && !series.is_empty();
    let mut wr = csv::Writer::from_writer(w);
    if with_ret {
        wr.write_record(["date", "symbol", "rv", "ret"])?;
    } else {
        wr.write_record(["date", "symbol", "rv"])?;
    }
    for s in series {
        for i in 0..s.len() {
            let mut row = vec![s.dates[i].to_string(), s.symbol.clone(), format!("{:e}", s.rv[i])];
            if with_ret {
                row.push(format!("{:e}", s.ret.as_ref().unwrap()[i]));
            }
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// `½·ln(rv)` per observation.
pub fn to_log_vol(series: &VolSeries) -> Result<Vec<f64>> {
    series
        .rv
        .iter()
        .zip(&series.dates)
        .map(|(&rv, d)| {
            if rv > 0.0 {
                Ok(0.5 * rv.ln())
            } else {
                Err(invalid(format!("{} {d}: nonpositive rv {rv}", series.symbol)))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Inclusive date ranges: train `[train_start, train_end]`, validation
/// `(train_end, val_end]`, test `(val_end, test_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDates {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
    pub test_end: NaiveDate,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitDates {
    fn default() -> Self {
        Self {
            train_start: ymd(2000, 1, 4),
            train_end: ymd(2012, 9, 6),
            val_end: ymd(2016, 11, 23),
            test_end: ymd(2021, 2, 17),
        }
    }
}

impl SplitDates {
    pub fn new(
        train_start: NaiveDate,
        train_end: NaiveDate,
        val_end: NaiveDate,
        test_end: NaiveDate,
    ) -> Result<Self> {
        let s = Self {
            train_start,
            train_end,
            val_end,
            test_end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_start <= self.train_end
            && self.train_end < self.val_end
            && self.val_end < self.test_end)
        {
            return Err(invalid(format!(
                "split dates must satisfy train_start <= train_end < val_end < test_end, got {} / {} / {} / {}",
                self.train_start, self.train_end, self.val_end, self.test_end
            )));
        }
        Ok(())
    }

    /// Split containing `date`, or `None` outside all three ranges.
    pub fn tag(&self, date: NaiveDate) -> Option<Split> {
        if date < self.train_start || date > self.test_end {
            None
        } else if date <= self.train_end {
            Some(Split::Train)
        } else if date <= self.val_end {
            Some(Split::Validation)
        } else {
            Some(Split::Test)
        }
    }
}

pub fn split_by_dates(series: &VolSeries, dates: &SplitDates) -> Result<Vec<Option<Split>>> {
    dates.validate()?;
    Ok(series.dates.iter().map(|&d| dates.tag(d)).collect())
}

/// Samples of one split, stored contiguously: window `i` occupies
/// `windows[i*T*F .. (i+1)*T*F]` in `[T, F]` row-major layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitData {
    pub windows: Vec<f64>,
    pub targets: Vec<f64>,
    pub symbol_ids: Vec<usize>,
    pub target_dates: Vec<NaiveDate>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Per-feature means (feature 0 is log volatility).
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardization {
    pub fn apply(&self, x: f64, feature: usize) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert(&self, z: f64, feature: usize) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }

    /// Converts a squared error in standardized log-vol units to raw units.
    pub fn mse_to_raw(&self, mse: f64) -> f64 {
        mse * self.std[0] * self.std[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub t_seq: usize,
    pub n_features: usize,
    pub symbols: Vec<String>,
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
    pub stats: Option<Standardization>,
    /// Symbols too short to yield a single window.
    pub skipped: Vec<String>,
}

impl WindowedDataset {
    pub fn split(&self, s: Split) -> &SplitData {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, s: Split) -> &mut SplitData {
        match s {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    pub fn window_len(&self) -> usize {
        self.t_seq * self.n_features
    }

    /// Window `i` of `split` as `[T, F]` row-major values.
    pub fn window(&self, split: Split, i: usize) -> &[f64] {
        let w = self.window_len();
        &self.split(split).windows[i * w..(i + 1) * w]
    }

    /// Per-step inputs (`T` tensors of `[b, F]`) and `[b, 1]` targets for
    /// the given sample indices.
    pub fn batch(&self, split: Split, idx: &[usize]) -> (Vec<Tensor>, Tensor) {
        let data = self.split(split);
        let (t, f) = (self.t_seq, self.n_features);
        let steps = (0..t)
            .map(|s| {
                let mut v = Vec::with_capacity(idx.len() * f);
                for &i in idx {
                    let off = i * t * f + s * f;
                    v.extend_from_slice(&data.windows[off..off + f]);
                }
                Tensor::matrix(idx.len(), f, v).expect("shape")
            })
            .collect();
        let targets = idx.iter().map(|&i| data.targets[i]).collect();
        (steps, Tensor::matrix(idx.len(), 1, targets).expect("shape"))
    }

    /// Samples `[start, end)` of a split as a `[b, T, F]` tensor plus targets.
    pub fn block(&self, split: Split, start: usize, end: usize) -> (Tensor, &[f64]) {
        let data = self.split(split);
        let w = self.window_len();
        let windows = Tensor::new(
            vec![end - start, self.t_seq, self.n_features],
            data.windows[start * w..end * w].to_vec(),
        )
        .expect("shape");
        (windows, &data.targets[start..end])
    }

    /// Subtracts the train mean and divides by the train (population) std.
    /// Log-vol statistics come from train targets; the return feature's
    /// from the return entries of train windows.
    pub fn standardize(mut self) -> Result<(Self, Standardization)> {
        if self.stats.is_some() {
            return Err(invalid("dataset is already standardized"));
        }
        if self.train.is_empty() {
            return Err(Error::Empty("train split has no samples".into()));
        }
        let mut mean = [0.0, 0.0];
        let mut std = [1.0, 1.0];
        let (m, s) = mean_std(self.train.targets.iter().copied());
        mean[0] = m;
        std[0] = s;
        if self.n_features == 2 {
            let (m, s) = mean_std(self.train.windows.iter().skip(1).step_by(2).copied());
            mean[1] = m;
            std[1] = s;
        }
        for (f, &sd) in std.iter().enumerate().take(self.n_features) {
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(invalid(format!(
                    "feature {f} has zero or non-finite train std ({sd})"
                )));
            }
        }
        let stats = Standardization { mean, std };
        let nf = self.n_features;
        for split in Split::ALL {
            let d = self.split_mut(split);
            for (k, v) in d.windows.iter_mut().enumerate() {
                *v = stats.apply(*v, k % nf);
            }
            for v in d.targets.iter_mut() {
                *v = stats.apply(*v, 0);
            }
        }
        self.stats = Some(stats);
        Ok((self, stats))
    }

    /// Audit dump: `split,symbol,target_date,target,w0,…` with window
    /// entries in `[T, F]` row-major order.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec![
            "split".to_string(),
            "symbol".into(),
            "target_date".into(),
            "target".into(),
        ];
        header.extend((0..self.window_len()).map(|k| format!("w{k}")));
        wr.write_record(&header)?;
        for split in Split::ALL {
            let d = self.split(split);
            for i in 0..d.len() {
                let mut row = vec![
                    split.as_str().to_string(),
                    self.symbols[d.symbol_ids[i]].clone(),
                    d.target_dates[i].to_string(),
                    format!("{:e}", d.targets[i]),
                ];
                row.extend(self.window(split, i).iter().map(|v| format!("{v:e}")));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sliding windows of `t_seq` consecutive observations with the next
/// log volatility as target. The target date decides the split; inputs may
/// predate it. With `use_returns`, each step carries `(log σ, ret)`.
pub fn make_windows(
    series: &[VolSeries],
    t_seq: usize,
    dates: &SplitDates,
    use_returns: bool,
) -> Result<WindowedDataset> {
    if t_seq == 0 {
        return Err(invalid("T_seq must be >= 1"));
    }
    dates.validate()?;
    let n_features = if use_returns { 2 } else { 1 };
    let mut ds = WindowedDataset {
        t_seq,
        n_features,
        symbols: Vec::new(),
        train: SplitData::default(),
        validation: SplitData::default(),
        test: SplitData::default(),
        stats: None,
        skipped: Vec::new(),
    };
    let mut ordered: Vec<&VolSeries> = series.iter().collect();
    ordered.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    for s in ordered {
        if ds.symbols.contains(&s.symbol) {
            return Err(invalid(format!("symbol {} appears twice", s.symbol)));
        }
        if s.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("dates of {} are not strictly increasing", s.symbol)));
        }
        let logv = to_log_vol(s)?;
        let ret = if use_returns {
            Some(s.ret.as_ref().ok_or_else(|| {
                invalid(format!("returns requested but {} has no ret column", s.symbol))
            })?)
        } else {
            None
        };
        let id = ds.symbols.len();
        ds.symbols.push(s.symbol.clone());
        if s.len() < t_seq + 1 {
            log::warn!(
                "{}: {} observations, too short for T_seq={t_seq}",
                s.symbol,
                s.len()
            );
            ds.skipped.push(s.symbol.clone());
            continue;
        }
        for j in t_seq..s.len() {
            let Some(split) = dates.tag(s.dates[j]) else {
                continue;
            };
            let d = ds.split_mut(split);
            for k in j - t_seq..j {
                d.windows.push(logv[k]);
                if let Some(r) = ret {
                    d.windows.push(r[k]);
                }
            }
            d.targets.push(logv[j]);
            d.symbol_ids.push(id);
            d.target_dates.push(s.dates[j]);
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(sym: &str, rv: &[f64]) -> VolSeries {
        VolSeries {
            symbol: sym.into(),
            dates: (0..rv.len())
                .map(|i| ymd(2001, 1, 1) + chrono::Days::new(i as u64))
                .collect(),
            rv: rv.to_vec(),
            ret: None,
        }
    }

    #[test]
    fn log_vol_examples() {
        let s = series("A", &[0.04, 1.0, std::f64::consts::E.powi(2)]);
        let v = to_log_vol(&s).unwrap();
        assert!((v[0] + 1.609_437_912_434_100_3).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 1.0).abs() < 1e-15);
        assert!(to_log_vol(&series("B", &[0.0])).is_err());
    }

    #[test]
    fn split_boundaries() {
        let d = SplitDates::default();
        assert_eq!(d.tag(ymd(2012, 9, 6)), Some(Split::Train));
        assert_eq!(d.tag(ymd(2012, 9, 7)), Some(Split::Validation));
        assert_eq!(d.tag(ymd(2016, 11, 23)), Some(Split::Validation));
        assert_eq!(d.tag(ymd(2016, 11, 24)), Some(Split::Test));
        assert_eq!(d.tag(ymd(2021, 2, 17)), Some(Split::Test));
        assert_eq!(d.tag(ymd(2021, 2, 18)), None);
        assert_eq!(d.tag(ymd(2000, 1, 3)), None);
        let bad = SplitDates {
            val_end: d.train_end,
            ..d
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_counts() {
        let all = SplitDates::new(ymd(2000, 1, 1), ymd(2030, 1, 1), ymd(2030, 1, 2), ymd(2030, 1, 3)).unwrap();
        let ds = make_windows(&[series("A", &[1.0; 5])], 3, &all, false).unwrap();
        assert_eq!(ds.train.len(), 2);
        let ds = make_windows(&[series("A", &[1.0; 3])], 3, &all, false).unwrap();
        assert_eq!(ds.train.len(), 0);
        assert_eq!(ds.skipped, vec!["A".to_string()]);
        let ds = make_windows(&[series("B", &[1.0; 5]), series("A", &[2.0; 5])], 3, &all, false).unwrap();
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.train.symbol_ids, vec![0, 0, 1, 1]);
        assert_eq!(ds.symbols, vec!["A", "B"]);
    }

    #[test]
    fn standardize_examples() {
        let all = SplitDates::new(ymd(2000, 1, 1), ymd(2030, 1, 1), ymd(2030, 1, 2), ymd(2030, 1, 3)).unwrap();
        let e = std::f64::consts::E;
        // log vols: 1, -1, 1, -1 ; T=1 → targets -1, 1, -1
        let rv = [e * e, 1.0 / (e * e), e * e, 1.0 / (e * e)];
        let ds = make_windows(&[series("A", &rv)], 1, &all, false).unwrap();
        let (_, st) = ds.standardize().unwrap();
        assert!((st.mean[0] + 1.0 / 3.0).abs() < 1e-12);
        let rv = [e * e, 1.0 / (e * e), e * e];
        let ds = make_windows(&[series("A", &rv)], 1, &all, false).unwrap();
        let before = ds.train.windows.clone();
        let (z, st) = ds.standardize().unwrap();
        assert!(st.mean[0].abs() < 1e-15 && (st.std[0] - 1.0).abs() < 1e-15);
        for (a, b) in z.train.windows.iter().zip(&before) {
            assert!((a - b).abs() < 1e-15);
        }
        let flat = make_windows(&[series("A", &[0.5; 6])], 2, &all, false).unwrap();
        assert!(flat.standardize().is_err());
    }
}
