//! Forecast model: a recurrent cell unrolled over a window from zero state,
//! then a sigmoid dense layer of width `N_h` and a linear output unit. Both
//! head layers always carry biases, whatever the cell's bias mode.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::cells::{glorot_uniform, init_cell, CellConfig, CellParams};
use crate::error::{invalid, Error, Result};
use crate::ndcore::{ops, Backend, Bindings, Eager, Gradients, Graph, Session, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellConfig,
    pub t_seq: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.t_seq == 0 {
            return Err(invalid("window length must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = Tensor> {
    /// `[out, in]`
    pub w: T,
    /// `[out]`
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub cell: CellParams,
    pub head_hidden: Dense,
    pub head_out: Dense,
}

struct View<V> {
    cell: CellParams<V>,
    hidden: Dense<V>,
    out: Dense<V>,
}

fn forward<B: Backend>(be: &mut B, view: &View<B::Value>, inputs: &[B::Value]) -> Result<B::Value> {
    let first = inputs
        .first()
        .ok_or_else(|| invalid("empty input window"))?;
    let mut state = view.cell.zero_state(be, first)?;
    for x in inputs {
        state = view.cell.step(be, x, &state)?;
    }
    let z = be.linear(&state.h, &view.hidden.w)?;
    let z = be.add_bias(&z, &view.hidden.b)?;
    let z = be.sigmoid(&z)?;
    let y = be.linear(&z, &view.out.w)?;
    be.add_bias(&y, &view.out.b)
}

pub const HEAD_HIDDEN_W: &str = "head.hidden.w";
pub const HEAD_HIDDEN_B: &str = "head.hidden.b";
pub const HEAD_OUT_W: &str = "head.out.w";
pub const HEAD_OUT_B: &str = "head.out.b";

/// Graph of the model unrolled over its window, with inputs `x.0 … x.{T−1}`
/// (`[batch, N_x]` each) and `target` (`[batch, 1]`), and outputs `pred`
/// and `loss` (mean squared error).
pub struct ModelGraph {
    pub graph: Graph,
    pub input_names: Vec<String>,
}

pub const TARGET: &str = "target";
pub const PRED: &str = "pred";
pub const LOSS: &str = "loss";

impl ModelGraph {
    /// Adds the batch inputs to a copy of the parameter bindings.
    pub fn bind(&self, params: &Bindings, steps: Vec<Tensor>, target: Tensor) -> Result<Bindings> {
        if steps.len() != self.input_names.len() {
            return Err(invalid(format!(
                "window of {} steps for a graph unrolled over {}",
                steps.len(),
                self.input_names.len()
            )));
        }
        let mut b = params.clone();
        for (name, x) in self.input_names.iter().zip(steps) {
            b.insert(name.clone(), x);
        }
        b.insert(TARGET.to_string(), target);
        Ok(b)
    }

    /// Batch loss and its gradients.
    pub fn loss_and_grad(&self, bindings: &Bindings) -> Result<(f64, Gradients)> {
        let mut s = Session::new(&self.graph);
        let out = s.evaluate(bindings)?;
        let loss = out[LOSS].data()[0];
        Ok((loss, s.backward(LOSS)?))
    }

    pub fn loss(&self, bindings: &Bindings) -> Result<f64> {
        let mut s = Session::new(&self.graph);
        Ok(s.evaluate(bindings)?[LOSS].data()[0])
    }
}

/// Splits `[batch, T, N_x]` windows into `T` step inputs of `[batch, N_x]`.
pub fn step_inputs(windows: &Tensor) -> Result<Vec<Tensor>> {
    let [b, t, f] = windows.shape() else {
        return Err(Error::Shape {
            context: "step_inputs".into(),
            detail: format!("expected [batch, T, N_x], got {:?}", windows.shape()),
        });
    };
    let (b, t, f) = (*b, *t, *f);
    let d = windows.data();
    Ok((0..t)
        .map(|s| {
            let mut step = Vec::with_capacity(b * f);
            for r in 0..b {
                let off = (r * t + s) * f;
                step.extend_from_slice(&d[off..off + f]);
            }
            Tensor::matrix(b, f, step).expect("shape")
        })
        .collect())
}

impl ForecastModel {
    /// Initializes cell then head from one seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = init_cell(&config.cell, &mut rng)?;
        let nh = config.cell.hidden;
        let head_hidden = Dense {
            w: glorot_uniform(&mut rng, nh, nh),
            b: Tensor::zeros(&[nh]),
        };
        let head_out = Dense {
            w: glorot_uniform(&mut rng, 1, nh),
            b: Tensor::zeros(&[1]),
        };
        Ok(Self {
            config,
            cell,
            head_hidden,
            head_out,
        })
    }

    pub fn t_seq(&self) -> usize {
        self.config.t_seq
    }

    pub fn n_inputs(&self) -> usize {
        self.config.cell.n_inputs
    }

    /// Every trainable tensor keyed by its canonical name.
    pub fn params(&self) -> Bindings {
        let mut b = Bindings::new();
        self.cell.visit("cell", &mut |name, t| {
            b.insert(name.to_string(), t.clone());
        });
        b.insert(HEAD_HIDDEN_W.into(), self.head_hidden.w.clone());
        b.insert(HEAD_HIDDEN_B.into(), self.head_hidden.b.clone());
        b.insert(HEAD_OUT_W.into(), self.head_out.w.clone());
        b.insert(HEAD_OUT_B.into(), self.head_out.b.clone());
        b
    }

    pub fn param_count(&self) -> usize {
        self.params().values().map(Tensor::len).sum()
    }

    /// Copy of the model with parameters replaced by `params` (same names
    /// and shapes as [`ForecastModel::params`]).
    pub fn with_params(&self, params: &Bindings) -> Result<Self> {
        let mut out = self.clone();
        let mut missing = None;
        let mut take = |name: &str, slot: &mut Tensor| match params.get(name) {
            Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
            Some(t) => {
                missing.get_or_insert(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            None => {
                missing.get_or_insert(format!("`{name}` missing"));
            }
        };
        out.cell.visit_mut("cell", &mut take);
        take(HEAD_HIDDEN_W, &mut out.head_hidden.w);
        take(HEAD_HIDDEN_B, &mut out.head_hidden.b);
        take(HEAD_OUT_W, &mut out.head_out.w);
        take(HEAD_OUT_B, &mut out.head_out.b);
        match missing {
            Some(msg) => Err(invalid(format!("parameter set mismatch: {msg}"))),
            None => Ok(out),
        }
    }

    fn eager_view(&self) -> View<Tensor> {
        View {
            cell: self.cell.clone(),
            hidden: self.head_hidden.clone(),
            out: self.head_out.clone(),
        }
    }

    /// Forecast from one `[T, N_x]` window.
    pub fn predict(&self, window: &Tensor) -> Result<f64> {
        let (t, f) = window.dims2().ok_or_else(|| Error::Shape {
            context: "predict".into(),
            detail: format!("window must be [T, N_x], got {:?}", window.shape()),
        })?;
        let batch = Tensor::new(vec![1, t, f], window.data().to_vec())?;
        Ok(self.predict_batch(&batch)?[0])
    }

    /// Forecasts for `[batch, T, N_x]` windows.
    pub fn predict_batch(&self, windows: &Tensor) -> Result<Vec<f64>> {
        let shape = windows.shape();
        if shape.len() != 3 || shape[1] != self.t_seq() || shape[2] != self.n_inputs() {
            return Err(Error::Shape {
                context: "predict_batch".into(),
                detail: format!(
                    "windows {:?} do not match [batch, {}, {}]",
                    shape,
                    self.t_seq(),
                    self.n_inputs()
                ),
            });
        }
        let steps = step_inputs(windows)?;
        let y = forward(&mut Eager, &self.eager_view(), &steps)?;
        Ok(y.into_data())
    }

    /// Mean squared error of the forecasts against `targets`.
    pub fn loss(&self, windows: &Tensor, targets: &[f64]) -> Result<f64> {
        if targets.is_empty() {
            return Err(Error::Empty("loss over an empty batch".into()));
        }
        let preds = self.predict_batch(windows)?;
        if preds.len() != targets.len() {
            return Err(invalid(format!(
                "{} windows but {} targets",
                preds.len(),
                targets.len()
            )));
        }
        let p = Tensor::vector(preds);
        let t = Tensor::vector(targets.to_vec());
        Ok(ops::mse(&p, &t)?.data()[0])
    }

    /// Training graph; its structure depends only on the configuration.
    pub fn build_graph(&self) -> Result<ModelGraph> {
        let mut g = Graph::new();
        let cell = self.cell.try_map("cell", &mut |name, _| Ok(g.param(name)))?;
        let view = View {
            cell,
            hidden: Dense {
                w: g.param(HEAD_HIDDEN_W),
                b: g.param(HEAD_HIDDEN_B),
            },
            out: Dense {
                w: g.param(HEAD_OUT_W),
                b: g.param(HEAD_OUT_B),
            },
        };
        let input_names: Vec<String> = (0..self.t_seq()).map(|t| format!("x.{t}")).collect();
        let inputs: Vec<_> = input_names.iter().map(|n| g.input(n)).collect();
        let pred = forward(&mut g, &view, &inputs)?;
        let target = g.input(TARGET);
        let loss = g.mse(pred, target);
        g.mark_output(PRED, pred);
        g.mark_output(LOSS, loss);
        Ok(ModelGraph { graph: g, input_names })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::default();
        a.meta
            .insert("config".into(), serde_json::to_string(&self.config)?);
        a.tensors = self.params();
        Ok(a)
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let cfg = archive
            .meta
            .get("config")
            .ok_or_else(|| Error::Archive("missing `config` entry".into()))?;
        let config: ModelConfig = serde_json::from_str(cfg)?;
        ForecastModel::init(config, 0)?.with_params(&archive.tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
