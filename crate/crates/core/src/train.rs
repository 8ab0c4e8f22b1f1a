//! Mini-batch Adam training with early stopping on validation loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Split, WindowedDataset};
use crate::error::{invalid, Error, Result};
use crate::model::ForecastModel;
use crate::ndcore::{Bindings, Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 1000,
            patience: 5,
            seed: 0,
            shuffle: true,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(invalid("batch_size, patience and max_epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(invalid(format!("bad clip norm {}", self.clip_norm)));
        }
        Ok(())
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Bindings,
    pub v: Bindings,
}

impl AdamState {
    pub fn new(params: &Bindings) -> Self {
        let zeros: Bindings = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
/// Parameters without a gradient entry are treated as having zero gradient.
pub fn optimizer_step(
    params: &mut Bindings,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    context: format!("optimizer_step `{name}`"),
                    detail: format!("grad {:?} vs param {:?}", g.shape(), p.shape()),
                });
            }
        }
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| invalid(format!("no optimizer state for `{name}`")))?;
        let v = state.v.get_mut(name).expect("m and v share keys");
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for k in 0..pd.len() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            md[k] = b1 * md[k] + (1.0 - b1) * gk;
            vd[k] = b2 * vd[k] + (1.0 - b2) * gk * gk;
            let mh = md[k] / c1;
            let vh = vd[k] / c2;
            pd[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Stop once the best loss of the last `patience` epochs fails to improve
/// on the best loss seen before them.
pub fn early_stop(val_curve: &[f64], patience: usize) -> bool {
    let patience = patience.max(1);
    if val_curve.len() < patience + 1 {
        return false;
    }
    let split = val_curve.len() - patience;
    let before = val_curve[..split].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = val_curve[split..].iter().copied().fold(f64::INFINITY, f64::min);
    recent >= before
}

const EVAL_CHUNK: usize = 4096;

/// Full-split MSE; per-sample forecasts do not depend on how the split is
/// chunked, so this equals the loss over the concatenated batch.
pub fn evaluate(model: &ForecastModel, data: &WindowedDataset, split: Split) -> Result<f64> {
    let n = data.split(split).len();
    if n == 0 {
        return Err(Error::Empty(format!("{} split has no samples", split.as_str())));
    }
    let mut sse = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let (windows, targets) = data.block(split, start, end);
        let preds = model.predict_batch(&windows)?;
        for (p, t) in preds.iter().zip(targets) {
            sse += (p - t) * (p - t);
        }
        start = end;
    }
    Ok(sse / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopped,
    EpochCap,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_s: f64,
    /// Batches whose gradient norm was clipped.
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub epochs_run: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// `min(val_curve)`, NaN when no epoch completed.
    pub best_val_loss: f64,
    /// 1-based epoch of `best_val_loss`, 0 when no epoch completed.
    pub best_epoch: usize,
    /// Parameters from `best_epoch` (the initial model if none completed).
    pub final_model: ForecastModel,
    pub log: Vec<EpochLog>,
    pub clip_events: usize,
    pub diagnostic: Option<String>,
}

impl TrainResult {
    /// Epoch log as CSV (`epoch,train_loss,val_loss,wall_time_s,clipped`).
    pub fn log_csv(&self) -> Result<String> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        for row in &self.log {
            wr.serialize(row)?;
        }
        let bytes = wr.into_inner().map_err(|e| invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
    }
}

fn global_norm(grads: &Gradients) -> f64 {
    grads.iter().map(|(_, g)| g.sum_squares()).sum::<f64>().sqrt()
}

pub fn train_model(
    model: &ForecastModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_model_observed(model, data, cfg, &mut |_, _| Ok(()))
}

/// [`train_model`] calling `on_epoch(epoch, model)` after every completed
/// epoch with the parameters reached at that point.
pub fn train_model_observed(
    model: &ForecastModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &ForecastModel) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Empty("training needs non-empty train and validation splits".into()));
    }
    if data.t_seq != model.t_seq() || data.n_features != model.n_inputs() {
        return Err(invalid(format!(
            "dataset windows [{}, {}] do not fit a model expecting [{}, {}]",
            data.t_seq,
            data.n_features,
            model.t_seq(),
            model.n_inputs()
        )));
    }

    let graph = model.build_graph()?;
    let mut params = model.params();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let started = Instant::now();

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut log = Vec::new();
    let mut clip_events = 0;
    let mut stop = StopReason::EpochCap;
    let mut diagnostic = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut clipped = 0;
        let mut sse = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (steps, target) = data.batch(Split::Train, idx);
            let bindings = graph.bind(&params, steps, target)?;
            let (loss, mut grads) = graph.loss_and_grad(&bindings)?;
            let norm = global_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                stop = StopReason::Diverged;
                diagnostic = Some(format!(
                    "non-finite {} at epoch {epoch}, batch {b}",
                    if loss.is_finite() { "gradient" } else { "loss" }
                ));
                break 'epochs;
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let scale = cfg.clip_norm / norm;
                let mut scaled = Gradients::default();
                for (k, g) in grads.iter() {
                    let mut g = g.clone();
                    g.scale(scale);
                    scaled.insert(k.clone(), g);
                }
                grads = scaled;
                clipped += 1;
            }
            sse += loss * idx.len() as f64;
            optimizer_step(&mut params, &grads, &mut adam, cfg.learning_rate)?;
        }
        current = current.with_params(&params)?;
        let val = evaluate(&current, data, Split::Validation)?;
        let train_loss = sse / data.train.len() as f64;
        if !val.is_finite() {
            stop = StopReason::Diverged;
            diagnostic = Some(format!("non-finite validation loss at epoch {epoch}"));
            break;
        }
        clip_events += clipped;
        train_curve.push(train_loss);
        val_curve.push(val);
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss: val,
            wall_time_s: started.elapsed().as_secs_f64(),
            clipped,
        });
        on_epoch(epoch, &current)?;
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = current.clone();
        }
        if early_stop(&val_curve, cfg.patience) {
            stop = StopReason::EarlyStopped;
            break;
        }
    }

    Ok(TrainResult {
        epochs_run: val_curve.len(),
        converged: stop == StopReason::EarlyStopped,
        stop_reason: stop,
        train_curve,
        val_curve,
        best_val_loss: if best_epoch == 0 { f64::NAN } else { best_val },
        best_epoch,
        final_model: best,
        log,
        clip_events,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        assert!(!early_stop(&[5.0, 4.0, 3.0, 2.0, 1.0], 5));
        let worse = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(!early_stop(&worse[..5], 5));
        assert!(early_stop(&worse, 5));
        let flat = [3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        for n in 1..7 {
            assert!(!early_stop(&flat[..n], 5), "fired at epoch {n}");
        }
        assert!(early_stop(&flat, 5));
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut p = Bindings::new();
        p.insert("w".into(), Tensor::vector(vec![1.0, -2.0]));
        let mut st = AdamState::new(&p);
        st.m.insert("w".into(), Tensor::vector(vec![1.0, 1.0]));
        st.v.insert("w".into(), Tensor::vector(vec![1.0, 1.0]));
        let mut g = Gradients::default();
        g.insert("w".into(), Tensor::vector(vec![0.0, 0.0]));
        let before = p.clone();
        st.m.insert("w".into(), Tensor::vector(vec![0.0, 0.0]));
        optimizer_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert!((st.v["w"].data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = Bindings::new();
        p.insert("w".into(), Tensor::vector(vec![0.0, 0.0, 0.0]));
        let mut st = AdamState::new(&p);
        let mut g = Gradients::default();
        g.insert("w".into(), Tensor::vector(vec![0.3, -5.0, 1e-3]));
        optimizer_step(&mut p, &g, &mut st, 0.01).unwrap();
        let d = p["w"].data();
        assert!((d[0] + 0.01).abs() < 1e-9);
        assert!((d[1] - 0.01).abs() < 1e-9);
        assert!((d[2] + 0.01).abs() < 1e-7);
    }
}
