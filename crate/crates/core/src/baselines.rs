//! Reference forecasters: persistence and an EMA-bank linear regression.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Split, WindowedDataset};
use crate::error::{invalid, Error, Result};
use crate::kernels::{ema, geometric_timescales};
use crate::linalg::{condition_number, lstsq};

/// Published rough-volatility test MSE, imported for comparison only.
pub const ROUGH_VOL_REFERENCE_MSE: f64 = 0.288;

/// Reference MSE drawn as the benchmark line: the override if given.
pub fn reference_mse(override_mse: Option<f64>) -> f64 {
    override_mse.unwrap_or(ROUGH_VOL_REFERENCE_MSE)
}

/// Condition number above which a design matrix is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Minimum samples per regressor.
pub const MIN_SAMPLES_PER_FEATURE: usize = 10;

pub fn persistence_forecast(window: &[f64]) -> Result<f64> {
    window
        .last()
        .copied()
        .ok_or_else(|| invalid("persistence needs a non-empty window"))
}

/// `[5, 25, 125, 625]`.
pub fn default_timescales() -> Vec<f64> {
    geometric_timescales(5.0, 4, 0.5)
        .expect("valid geometric parameters")
        .timescales()
        .to_vec()
}

/// EMAs of `window` at each timescale (started at the window's first
/// value, read at its end), followed by the last value.
pub fn ema_features(window: &[f64], timescales: &[f64]) -> Result<Vec<f64>> {
    let last = persistence_forecast(window)?;
    let mut out = Vec::with_capacity(timescales.len() + 1);
    for &tau in timescales {
        if !(tau >= 1.0) {
            return Err(invalid(format!("EMA timescale {tau} must be >= 1")));
        }
        let e = ema(window, 1.0 / tau, window[0])?;
        out.push(*e.last().expect("non-empty"));
    }
    out.push(last);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearKernelForecaster {
    pub timescales: Vec<f64>,
    /// One coefficient per EMA timescale, then the last-value coefficient.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fitted_on_train: bool,
    /// Condition number of the fitted design (with intercept column).
    pub condition: f64,
}

impl LinearKernelForecaster {
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        let f = ema_features(window, &self.timescales)?;
        Ok(self.intercept + f.iter().zip(&self.coefficients).map(|(x, c)| x * c).sum::<f64>())
    }
}

/// Ordinary least squares of `targets` on [`ema_features`] plus intercept.
pub fn fit_linear_kernel(
    windows: &[&[f64]],
    targets: &[f64],
    timescales: &[f64],
) -> Result<LinearKernelForecaster> {
    if windows.len() != targets.len() {
        return Err(invalid(format!(
            "{} windows but {} targets",
            windows.len(),
            targets.len()
        )));
    }
    let p = timescales.len() + 1;
    if windows.len() < MIN_SAMPLES_PER_FEATURE * p {
        return Err(invalid(format!(
            "{} samples for {p} features; need at least {}",
            windows.len(),
            MIN_SAMPLES_PER_FEATURE * p
        )));
    }
    let mut a = DMatrix::zeros(windows.len(), p + 1);
    for (i, w) in windows.iter().enumerate() {
        for (j, v) in ema_features(w, timescales)?.into_iter().enumerate() {
            a[(i, j)] = v;
        }
        a[(i, p)] = 1.0;
    }
    let cond = condition_number(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition: cond });
    }
    let x = lstsq(&a, &DVector::from_column_slice(targets));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OLS coefficients".into()));
    }
    Ok(LinearKernelForecaster {
        timescales: timescales.to_vec(),
        coefficients: x.iter().take(p).copied().collect(),
        intercept: x[p],
        fitted_on_train: false,
        condition: cond,
    })
}

/// Log-volatility channel (feature 0) of window `i`.
pub fn log_vol_window(data: &WindowedDataset, split: Split, i: usize) -> Vec<f64> {
    data.window(split, i)
        .iter()
        .step_by(data.n_features)
        .copied()
        .collect()
}

/// Fits on the train split of `data` (log-volatility channel only).
pub fn fit_on_train(data: &WindowedDataset, timescales: &[f64]) -> Result<LinearKernelForecaster> {
    let owned: Vec<Vec<f64>> = (0..data.train.len())
        .map(|i| log_vol_window(data, Split::Train, i))
        .collect();
    let views: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
    let mut f = fit_linear_kernel(&views, &data.train.targets, timescales)?;
    f.fitted_on_train = true;
    Ok(f)
}

/// Forecasts of `forecast` on every window of `split`.
pub fn predictions(
    data: &WindowedDataset,
    split: Split,
    forecast: impl Fn(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..data.split(split).len())
        .map(|i| forecast(&log_vol_window(data, split, i)))
        .collect()
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(invalid("MSE needs equally many non-zero predictions and targets"));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Writes `symbol,date,prediction,target` rows in the dataset's units.
pub fn write_predictions_csv(
    data: &WindowedDataset,
    split: Split,
    preds: &[f64],
    w: impl Write,
) -> Result<()> {
    let d = data.split(split);
    if preds.len() != d.len() {
        return Err(invalid("one prediction per sample required"));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["symbol", "date", "prediction", "target"])?;
    for i in 0..d.len() {
        wr.write_record([
            data.symbols[d.symbol_ids[i]].clone(),
            d.target_dates[i].to_string(),
            format!("{:e}", preds[i]),
            format!("{:e}", d.targets[i]),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
