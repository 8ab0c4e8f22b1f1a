//! Exponential moving averages and sums-of-exponentials approximations of
//! power-law memory kernels.
//!
//! A kernel `K(x) = Σ wᵢ exp(−x/τᵢ)` is stored with weights normalized to
//! one; its quality as an approximation of `x^(−α)` is measured by the sup
//! of the relative error over a log-spaced grid after rescaling both curves
//! to agree at the left end of the fitting range.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::nnls;

/// Grid density used by [`fit_exp_sum`] and [`approx_error`].
pub const POINTS_PER_DECADE: usize = 64;

/// Recursive EMA: `out[t] = (1 − λ)·out[t−1] + λ·series[t]`, with
/// `out[−1] = init`.
pub fn ema(series: &[f64], lambda: f64, init: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("EMA lambda {lambda} outside [0, 1]")));
    }
    let mut prev = init;
    Ok(series
        .iter()
        .map(|&y| {
            prev = prev * (1.0 - lambda) + lambda * y;
            prev
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSumKernel {
    weights: Vec<f64>,
    timescales: Vec<f64>,
    alpha: f64,
    valid_range: (f64, f64),
}

impl ExpSumKernel {
    /// Builds a kernel, normalizing the weights to sum to one. Timescales
    /// must be positive and strictly increasing.
    pub fn new(
        weights: Vec<f64>,
        timescales: Vec<f64>,
        alpha: f64,
        valid_range: (f64, f64),
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != timescales.len() {
            return Err(invalid(format!(
                "need matching non-empty weights/timescales, got {} and {}",
                weights.len(),
                timescales.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        if timescales.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(invalid("timescales must be finite and positive"));
        }
        if timescales.windows(2).any(|p| p[1] <= p[0]) {
            return Err(invalid("timescales must be strictly increasing"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        let (lo, hi) = valid_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(invalid(format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            timescales,
            alpha,
            valid_range,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn timescales(&self) -> &[f64] {
        &self.timescales
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn valid_range(&self) -> (f64, f64) {
        self.valid_range
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ wᵢ exp(−x/τᵢ)`.
    pub fn eval(&self, x: f64) -> f64 {
        eval_weighted(&self.weights, &self.timescales, x)
    }

    /// `tau,weight` CSV, one row per exponential.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,weight\n");
        for (t, w) in self.timescales.iter().zip(&self.weights) {
            s.push_str(&format!("{t:?},{w:?}\n"));
        }
        s
    }
}

fn eval_weighted(weights: &[f64], timescales: &[f64], x: f64) -> f64 {
    weights
        .iter()
        .zip(timescales)
        .map(|(w, t)| w * (-x / t).exp())
        .sum()
}

/// `τᵢ = cⁱ` and `wᵢ ∝ c^(−α·i)` for `i = 1..=n`.
pub fn geometric_timescales(c: f64, n: usize, alpha: f64) -> Result<ExpSumKernel> {
    if !(c > 1.0) {
        return Err(invalid(format!("geometric ratio c={c} must exceed 1")));
    }
    if n == 0 {
        return Err(invalid("need at least one timescale"));
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha={alpha} must be positive")));
    }
    let timescales: Vec<f64> = (1..=n).map(|i| c.powi(i as i32)).collect();
    let weights: Vec<f64> = (1..=n).map(|i| c.powf(-alpha * i as f64)).collect();
    let range = (timescales[0], timescales[n - 1]);
    ExpSumKernel::new(weights, timescales, alpha, range)
}

pub fn eval_kernel(k: &ExpSumKernel, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(invalid(format!("kernel argument {x} must be >= 0")));
    }
    Ok(k.eval(x))
}

/// Log-spaced grid on `[lo, hi]` with at least [`POINTS_PER_DECADE`] points
/// per decade, endpoints included.
pub fn log_grid(lo: f64, hi: f64) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let m = ((decades * POINTS_PER_DECADE as f64).ceil() as usize + 1).max(2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..m)
        .map(|i| {
            if i == m - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (m - 1) as f64).exp()
            }
        })
        .collect()
}

/// Sup over the grid of `|K(x)/K(lo) − g(x)/g(lo)| / (g(x)/g(lo))`.
pub fn sup_relative_error(k: &ExpSumKernel, target: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = k.valid_range;
    sup_error_raw(k.weights(), k.timescales(), &log_grid(lo, hi), lo, target)
}

fn sup_error_raw(
    weights: &[f64],
    timescales: &[f64],
    grid: &[f64],
    lo: f64,
    target: impl Fn(f64) -> f64,
) -> f64 {
    let k0 = eval_weighted(weights, timescales, lo);
    let t0 = target(lo);
    if !(k0 > 0.0) {
        return f64::INFINITY;
    }
    grid.iter()
        .map(|&x| {
            let t = target(x) / t0;
            (eval_weighted(weights, timescales, x) / k0 - t).abs() / t
        })
        .fold(0.0, f64::max)
}

/// Relative error of the kernel against `x^(−α)` over its valid range.
pub fn approx_error(k: &ExpSumKernel) -> f64 {
    let alpha = k.alpha;
    sup_relative_error(k, |x| x.powf(-alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFit {
    pub kernel: ExpSumKernel,
    pub sup_error: f64,
}

/// Budget for each Nelder–Mead polishing run.
const NM_MAX_ITERS: u64 = 4000;
const NM_MAX_RESTARTS: usize = 12;

struct Problem {
    grid: Vec<f64>,
    lo: f64,
    alpha: f64,
    n: usize,
}

impl Problem {
    fn target(&self, x: f64) -> f64 {
        x.powf(-self.alpha)
    }

    /// Parameter vector: `n` log-timescales followed by `n` square-root weights.
    fn error_of(&self, theta: &[f64]) -> f64 {
        let (lt, u) = theta.split_at(self.n);
        let tau: Vec<f64> = lt.iter().map(|v| v.exp()).collect();
        let w: Vec<f64> = u.iter().map(|v| v * v).collect();
        if w.iter().sum::<f64>() <= 0.0 || tau.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return f64::INFINITY;
        }
        let e = sup_error_raw(&w, &tau, &self.grid, self.lo, |x| self.target(x));
        if e.is_nan() {
            f64::INFINITY
        } else {
            e
        }
    }

    fn nnls_weights(&self, log_tau: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        let a = DMatrix::from_fn(m, self.n, |r, c| {
            let x = self.grid[r];
            (-x / log_tau[c].exp()).exp() / self.target(x)
        });
        nnls(&a, &DVector::from_element(m, 1.0)).iter().copied().collect()
    }

    fn theta(log_tau: &[f64], w: &[f64]) -> Vec<f64> {
        let total: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        log_tau
            .iter()
            .copied()
            .chain(w.iter().map(|v| (v / total).sqrt()))
            .collect()
    }
}

impl CostFunction for Problem {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.error_of(p))
    }
}

/// Repeated Nelder–Mead runs from the incumbent until a restart stops
/// improving. Returns the polished parameters and whether the final run
/// converged before exhausting its iteration budget.
fn polish(problem: &Problem, start: Vec<f64>) -> Result<(Vec<f64>, f64, bool)> {
    let mut best = start;
    let mut best_err = problem.error_of(&best);
    let mut converged = false;
    for restart in 0..NM_MAX_RESTARTS {
        let step = 0.25 / (1 + restart) as f64;
        let umax = best[problem.n..].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut simplex = vec![best.clone()];
        for j in 0..best.len() {
            let mut v = best.clone();
            v[j] += if j < problem.n { step } else { step * umax.max(1e-3) };
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-13)
            .map_err(|e| invalid(e.to_string()))?;
        let problem_copy = Problem {
            grid: problem.grid.clone(),
            lo: problem.lo,
            alpha: problem.alpha,
            n: problem.n,
        };
        let res = Executor::new(problem_copy, solver)
            .configure(|s| s.max_iters(NM_MAX_ITERS))
            .run()
            .map_err(|e| invalid(e.to_string()))?;
        let state = res.state();
        let run_converged = state.get_iter() < NM_MAX_ITERS;
        let Some(p) = state.get_best_param().cloned() else {
            break;
        };
        let e = problem.error_of(&p);
        let improved = e < best_err * (1.0 - 1e-9);
        if e < best_err {
            best = p;
            best_err = e;
        }
        converged = run_converged;
        if !improved && run_converged {
            break;
        }
    }
    Ok((best, best_err, converged))
}

fn kernel_from_theta(theta: &[f64], n: usize, alpha: f64, range: (f64, f64)) -> Result<ExpSumKernel> {
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (theta[i].exp(), theta[n + i] * theta[n + i]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in 1..pairs.len() {
        if pairs[i].0 <= pairs[i - 1].0 {
            pairs[i].0 = pairs[i - 1].0 * (1.0 + 1e-12);
        }
    }
    let (tau, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    ExpSumKernel::new(w, tau, alpha, range)
}

/// Fits `n` exponentials to `x^(−α)` on `[x_lo, x_hi]`, minimizing the sup
/// relative error reported by [`approx_error`].
///
/// Timescales start on a geometric grid spanning the range with NNLS
/// weights, get one round of coordinate refinement on their logarithms, and
/// are then polished jointly with the weights by Nelder–Mead on the sup
/// error. For `n > 1` the `n − 1` solution padded with an unweighted extra
/// timescale is polished too and the better result kept, so the error never
/// increases with `n`.
pub fn fit_exp_sum(alpha: f64, x_lo: f64, x_hi: f64, n: usize) -> Result<KernelFit> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid(format!("alpha={alpha} outside (0, 2)")));
    }
    if !(x_lo > 0.0 && x_lo < x_hi) {
        return Err(invalid(format!("need 0 < x_lo < x_hi, got [{x_lo}, {x_hi}]")));
    }
    if n == 0 {
        return Err(invalid("need at least one exponential"));
    }
    let mut previous: Option<Vec<f64>> = None;
    let mut last = None;
    for k in 1..=n {
        let (theta, err, converged) = fit_level(alpha, x_lo, x_hi, k, previous.as_deref())?;
        previous = Some(theta.clone());
        last = Some((theta, err, converged));
    }
    let (theta, err, converged) = last.expect("n >= 1");
    if !err.is_finite() || !converged {
        return Err(Error::FitNotConverged {
            best_error: err,
            detail: format!("n={n}, alpha={alpha}, range [{x_lo}, {x_hi}]"),
        });
    }
    let kernel = kernel_from_theta(&theta, n, alpha, (x_lo, x_hi))?;
    let sup_error = approx_error(&kernel);
    Ok(KernelFit { kernel, sup_error })
}

fn fit_level(
    alpha: f64,
    lo: f64,
    hi: f64,
    n: usize,
    smaller: Option<&[f64]>,
) -> Result<(Vec<f64>, f64, bool)> {
    let problem = Problem {
        grid: log_grid(lo, hi),
        lo,
        alpha,
        n,
    };

    // geometric start + NNLS
    let (a, b) = (lo.ln(), hi.ln());
    let mut log_tau: Vec<f64> = if n == 1 {
        vec![0.5 * (a + b)]
    } else {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    };
    let mut weights = problem.nnls_weights(&log_tau);
    let mut best_err = problem.error_of(&Problem::theta(&log_tau, &weights));

    // one round of coordinate refinement on log-timescales
    for i in 0..n {
        for step in 0..=30 {
            let offset = -1.5 + 0.1 * step as f64;
            let mut trial = log_tau.clone();
            trial[i] += offset;
            let w = problem.nnls_weights(&trial);
            let e = problem.error_of(&Problem::theta(&trial, &w));
            if e < best_err {
                best_err = e;
                log_tau = trial;
                weights = w;
            }
        }
    }
    let (mut theta, mut err, mut converged) =
        polish(&problem, Problem::theta(&log_tau, &weights))?;

    if let Some(prev) = smaller {
        let m = n - 1;
        let slowest = prev[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut warm: Vec<f64> = prev[..m].to_vec();
        warm.push(slowest.max(b) + 1.0);
        warm.extend_from_slice(&prev[m..]);
        warm.push(0.0);
        let (t2, e2, c2) = polish(&problem, warm)?;
        if e2 < err {
            theta = t2;
            err = e2;
            converged = c2;
        }
    }
    Ok((theta, err, converged))
}
