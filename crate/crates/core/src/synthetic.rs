//! Synthetic series: an EMA-mixture autoregression with a known noise
//! floor, and a multi-symbol long-memory log-volatility panel in the
//! `date,symbol,rv` layout.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{SplitDates, VolSeries};
use crate::error::{invalid, Result};

/// `y_{t+1} = a·EMA_{τ1}(y)_t + b·EMA_{τ2}(y)_t + ε`, `ε ~ N(0, noise_var)`,
/// with EMAs `ỹ_t = (1−1/τ)ỹ_{t−1} + y_t/τ` started at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaMixture {
    pub a: f64,
    pub b: f64,
    pub tau_fast: f64,
    pub tau_slow: f64,
    pub noise_var: f64,
}

impl Default for EmaMixture {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 0.45,
            tau_fast: 5.0,
            tau_slow: 100.0,
            noise_var: 0.01,
        }
    }
}

impl EmaMixture {
    /// Series of `len` values after discarding `burn_in` initial steps.
    pub fn generate(&self, len: usize, burn_in: usize, seed: u64) -> Result<Vec<f64>> {
        if self.tau_fast < 1.0 || self.tau_slow < 1.0 || !(self.noise_var >= 0.0) {
            return Err(invalid("timescales must be >= 1 and noise variance >= 0"));
        }
        if (self.a + self.b).abs() >= 1.0 {
            return Err(invalid("|a + b| must be < 1 for a stationary process"));
        }
        let noise = Normal::new(0.0, self.noise_var.sqrt()).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lf, ls) = (1.0 / self.tau_fast, 1.0 / self.tau_slow);
        let (mut ef, mut es, mut y) = (0.0, 0.0, 0.0);
        let mut out = Vec::with_capacity(len);
        for t in 0..burn_in + len {
            ef += lf * (y - ef);
            es += ls * (y - es);
            y = self.a * ef + self.b * es + noise.sample(&mut rng);
            if t >= burn_in {
                out.push(y);
            }
        }
        Ok(out)
    }

    /// One-step-ahead conditional means for `ys` (EMAs restarted at zero,
    /// so early entries are biased until the slow EMA warms up).
    pub fn conditional_mean(&self, ys: &[f64]) -> Vec<f64> {
        let (lf, ls) = (1.0 / self.tau_fast, 1.0 / self.tau_slow);
        let (mut ef, mut es) = (0.0, 0.0);
        ys.iter()
            .map(|&y| {
                ef += lf * (y - ef);
                es += ls * (y - es);
                self.a * ef + self.b * es
            })
            .collect()
    }
}

/// Wraps values as a series whose log volatility equals the values
/// (`rv = e^{2y}`), one observation per calendar day from `start`.
pub fn as_log_vol_series(symbol: &str, values: &[f64], start: NaiveDate) -> VolSeries {
    VolSeries {
        symbol: symbol.to_string(),
        dates: (0..values.len())
            .map(|i| start + Days::new(i as u64))
            .collect(),
        rv: values.iter().map(|y| (2.0 * y).exp()).collect(),
        ret: None,
    }
}

/// Split dates putting the first `train` fraction of `series` dates in
/// train, the next `val` fraction in validation and the rest in test.
pub fn fraction_split(series: &VolSeries, train: f64, val: f64) -> Result<SplitDates> {
    let n = series.len();
    if n < 3 || !(0.0 < train && train < train + val && train + val < 1.0) {
        return Err(invalid("need >= 3 dates and 0 < train < train + val < 1"));
    }
    let i_train = ((n as f64 * train) as usize).clamp(1, n - 2) - 1;
    let i_val = ((n as f64 * (train + val)) as usize).clamp(i_train + 2, n - 1) - 1;
    SplitDates::new(series.dates[0], series.dates[i_train], series.dates[i_val], series.dates[n - 1])
}

/// Business days (Mon–Fri) in `[start, end]`.
pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// Long-memory log-volatility panel: per symbol, log σ is a level plus a
/// sum of AR(1) components with geometric timescales (a truncated
/// power-law memory), one component shared across symbols, plus i.i.d.
/// measurement noise standing in for realized-variance estimation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolPanel {
    pub symbols: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// AR(1) timescales in days.
    pub timescales: Vec<f64>,
    /// Stationary standard deviation of each component.
    pub component_std: Vec<f64>,
    /// Index of the component shared by all symbols.
    pub common: usize,
    pub noise_std: f64,
    /// Also emit daily log returns drawn as `σ·z`.
    pub emit_returns: bool,
}

impl Default for VolPanel {
    fn default() -> Self {
        Self {
            symbols: 4,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
            end: NaiveDate::from_ymd_opt(2021, 2, 17).unwrap(),
            timescales: vec![2.0, 10.0, 50.0, 250.0, 1250.0],
            component_std: vec![0.12, 0.2, 0.25, 0.28, 0.25],
            common: 3,
            noise_std: 0.15,
            emit_returns: false,
        }
    }
}

impl VolPanel {
    pub fn generate(&self, seed: u64) -> Result<Vec<VolSeries>> {
        if self.timescales.len() != self.component_std.len() || self.timescales.is_empty() {
            return Err(invalid("timescales and component_std must be non-empty and equally long"));
        }
        if self.common >= self.timescales.len() {
            return Err(invalid("common component index out of range"));
        }
        if self.timescales.iter().any(|&t| !(t >= 1.0)) {
            return Err(invalid("AR timescales must be >= 1"));
        }
        let dates = business_days(self.start, self.end);
        if dates.is_empty() {
            return Err(invalid("empty date range"));
        }
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.timescales.len();
        let phi: Vec<f64> = self.timescales.iter().map(|t| (-1.0 / t).exp()).collect();
        let innov: Vec<f64> = phi
            .iter()
            .zip(&self.component_std)
            .map(|(p, s)| s * (1.0 - p * p).sqrt())
            .collect();

        // shared path, started from its stationary law
        let mut c = self.component_std[self.common] * std_normal.sample(&mut rng);
        let common: Vec<f64> = dates
            .iter()
            .map(|_| {
                c = phi[self.common] * c + innov[self.common] * std_normal.sample(&mut rng);
                c
            })
            .collect();

        let mut out = Vec::with_capacity(self.symbols);
        for s in 0..self.symbols {
            let level = -4.8 + 0.2 * std_normal.sample(&mut rng);
            let mut x: Vec<f64> = (0..k)
                .map(|j| self.component_std[j] * std_normal.sample(&mut rng))
                .collect();
            let mut rv = Vec::with_capacity(dates.len());
            let mut ret = Vec::with_capacity(dates.len());
            for &cm in &common {
                let mut logv = level;
                for j in 0..k {
                    if j == self.common {
                        logv += cm;
                    } else {
                        x[j] = phi[j] * x[j] + innov[j] * std_normal.sample(&mut rng);
                        logv += x[j];
                    }
                }
                let sigma = logv.exp();
                let observed = logv + self.noise_std * std_normal.sample(&mut rng);
                rv.push((2.0 * observed).exp());
                ret.push(sigma * std_normal.sample(&mut rng));
            }
            out.push(VolSeries {
                symbol: format!("SYN{s:02}"),
                dates: dates.clone(),
                rv,
                ret: self.emit_returns.then_some(ret),
            });
        }
        Ok(out)
    }
}
