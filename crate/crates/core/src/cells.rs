//! Recurrent cells: LSTM with forget gate, VLSTM (several EMA timescales per
//! cell dimension sharing one candidate and output gate), and multi-scale GRU.
//!
//! Step functions are written once against [`Backend`], so the same code
//! drives eager evaluation on tensors and graph construction for training.
//! Parameter containers are generic over the leaf type: `Tensor` for stored
//! values, `NodeId` once registered in a graph.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ndcore::{Backend, Eager, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Lstm,
    Vlstm,
    #[serde(rename = "msgru")]
    MsGru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateCoupling {
    Independent,
    /// `i = 1 − f` per scale; input-gate weights do not exist.
    Tied,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(invalid(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(Architecture { Lstm => "lstm", Vlstm => "vlstm", MsGru => "msgru" });
text_enum!(BiasMode { On => "on", Off => "off" });
text_enum!(GateCoupling { Independent => "independent", Tied => "tied" });

/// Shape and structure of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellConfig {
    pub arch: Architecture,
    pub n_inputs: usize,
    pub hidden: usize,
    pub scales: usize,
    pub bias: BiasMode,
    pub coupling: GateCoupling,
}

impl CellConfig {
    pub fn lstm(n_inputs: usize, hidden: usize, bias: BiasMode) -> Self {
        Self {
            arch: Architecture::Lstm,
            n_inputs,
            hidden,
            scales: 1,
            bias,
            coupling: GateCoupling::Independent,
        }
    }

    pub fn vlstm(
        n_inputs: usize,
        hidden: usize,
        scales: usize,
        bias: BiasMode,
        coupling: GateCoupling,
    ) -> Self {
        Self {
            arch: Architecture::Vlstm,
            n_inputs,
            hidden,
            scales,
            bias,
            coupling,
        }
    }

    pub fn msgru(n_inputs: usize, hidden: usize, scales: usize, bias: BiasMode) -> Self {
        Self {
            arch: Architecture::MsGru,
            n_inputs,
            hidden,
            scales,
            bias,
            coupling: GateCoupling::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.hidden == 0 || self.scales == 0 {
            return Err(invalid(format!(
                "cell dimensions must be >= 1 (N_x={}, N_h={}, n={})",
                self.n_inputs, self.hidden, self.scales
            )));
        }
        match self.arch {
            Architecture::Lstm if self.scales != 1 => {
                Err(invalid("an LSTM has exactly one timescale; use vlstm"))
            }
            Architecture::Lstm | Architecture::MsGru
                if self.coupling == GateCoupling::Tied =>
            {
                Err(invalid(format!("tied gates are a VLSTM option, not {}", self.arch)))
            }
            _ => Ok(()),
        }
    }
}

/// `σ(W x + U h + b)` weights for one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBlock<T = Tensor> {
    /// `[N_h, N_x]`
    pub w: T,
    /// `[N_h, N_h]`
    pub u: T,
    /// `[N_h]`, absent when biases are off.
    pub b: Option<T>,
}

impl<T> GateBlock<T> {
    fn try_map<U>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U>,
    ) -> Result<GateBlock<U>> {
        Ok(GateBlock {
            w: f(&format!("{prefix}.w"), &self.w)?,
            u: f(&format!("{prefix}.u"), &self.u)?,
            b: match &self.b {
                Some(b) => Some(f(&format!("{prefix}.b"), b)?),
                None => None,
            },
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.u"), &mut self.u);
        if let Some(b) = &mut self.b {
            f(&format!("{prefix}.b"), b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = Tensor> {
    pub candidate: GateBlock<T>,
    pub output: GateBlock<T>,
    pub forget: GateBlock<T>,
    pub input: GateBlock<T>,
    pub n_inputs: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlstmParams<T = Tensor> {
    pub candidate: GateBlock<T>,
    pub output: GateBlock<T>,
    /// One block per timescale.
    pub forget: Vec<GateBlock<T>>,
    /// One block per timescale; empty when gates are tied.
    pub input: Vec<GateBlock<T>>,
    /// `None` for one scale, `[N_h]` logits (α = σ(a)) for two, `[n, N_h]`
    /// softmax logits beyond.
    pub mix: Option<T>,
    pub coupling: GateCoupling,
    pub n_inputs: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsGruParams<T = Tensor> {
    pub candidate: GateBlock<T>,
    pub reset: GateBlock<T>,
    /// Per-scale update-rate (λ) blocks.
    pub update: Vec<GateBlock<T>>,
    /// `[n, N_h]` softmax logits for constant mixing weights; `None` for one scale.
    pub mix: Option<T>,
    pub n_inputs: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams<T = Tensor> {
    Lstm(LstmParams<T>),
    Vlstm(VlstmParams<T>),
    MsGru(MsGruParams<T>),
}

impl From<LstmParams> for VlstmParams {
    /// The one-scale VLSTM with the same weights.
    fn from(p: LstmParams) -> Self {
        VlstmParams {
            candidate: p.candidate,
            output: p.output,
            forget: vec![p.forget],
            input: vec![p.input],
            mix: None,
            coupling: GateCoupling::Independent,
            n_inputs: p.n_inputs,
            hidden: p.hidden,
        }
    }
}

impl<T> CellParams<T> {
    pub fn arch(&self) -> Architecture {
        match self {
            CellParams::Lstm(_) => Architecture::Lstm,
            CellParams::Vlstm(_) => Architecture::Vlstm,
            CellParams::MsGru(_) => Architecture::MsGru,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden,
            CellParams::Vlstm(p) => p.hidden,
            CellParams::MsGru(p) => p.hidden,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.n_inputs,
            CellParams::Vlstm(p) => p.n_inputs,
            CellParams::MsGru(p) => p.n_inputs,
        }
    }

    pub fn scales(&self) -> usize {
        match self {
            CellParams::Lstm(_) => 1,
            CellParams::Vlstm(p) => p.forget.len(),
            CellParams::MsGru(p) => p.update.len(),
        }
    }

    /// Converts every leaf, passing its canonical name (`prefix.block.w`, ...).
    pub fn try_map<U>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U>,
    ) -> Result<CellParams<U>> {
        let blocks = |name: &str,
                      list: &[GateBlock<T>],
                      f: &mut dyn FnMut(&str, &T) -> Result<U>|
         -> Result<Vec<GateBlock<U>>> {
            list.iter()
                .enumerate()
                .map(|(k, g)| g.try_map(&format!("{prefix}.{name}{}", k + 1), f))
                .collect()
        };
        Ok(match self {
            CellParams::Lstm(p) => CellParams::Lstm(LstmParams {
                candidate: p.candidate.try_map(&format!("{prefix}.cand"), f)?,
                output: p.output.try_map(&format!("{prefix}.output"), f)?,
                forget: p.forget.try_map(&format!("{prefix}.forget"), f)?,
                input: p.input.try_map(&format!("{prefix}.input"), f)?,
                n_inputs: p.n_inputs,
                hidden: p.hidden,
            }),
            CellParams::Vlstm(p) => CellParams::Vlstm(VlstmParams {
                candidate: p.candidate.try_map(&format!("{prefix}.cand"), f)?,
                output: p.output.try_map(&format!("{prefix}.output"), f)?,
                forget: blocks("forget", &p.forget, f)?,
                input: blocks("input", &p.input, f)?,
                mix: match &p.mix {
                    Some(m) => Some(f(&format!("{prefix}.mix"), m)?),
                    None => None,
                },
                coupling: p.coupling,
                n_inputs: p.n_inputs,
                hidden: p.hidden,
            }),
            CellParams::MsGru(p) => CellParams::MsGru(MsGruParams {
                candidate: p.candidate.try_map(&format!("{prefix}.cand"), f)?,
                reset: p.reset.try_map(&format!("{prefix}.reset"), f)?,
                update: blocks("update", &p.update, f)?,
                mix: match &p.mix {
                    Some(m) => Some(f(&format!("{prefix}.mix"), m)?),
                    None => None,
                },
                n_inputs: p.n_inputs,
                hidden: p.hidden,
            }),
        })
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
        self.try_map(prefix, &mut |name, t| {
            f(name, t);
            Ok(())
        })
        .expect("visitor is infallible");
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        let blocks = |name: &str, list: &mut [GateBlock<T>], f: &mut dyn FnMut(&str, &mut T)| {
            for (k, g) in list.iter_mut().enumerate() {
                g.visit_mut(&format!("{prefix}.{name}{}", k + 1), f);
            }
        };
        match self {
            CellParams::Lstm(p) => {
                p.candidate.visit_mut(&format!("{prefix}.cand"), f);
                p.output.visit_mut(&format!("{prefix}.output"), f);
                p.forget.visit_mut(&format!("{prefix}.forget"), f);
                p.input.visit_mut(&format!("{prefix}.input"), f);
            }
            CellParams::Vlstm(p) => {
                p.candidate.visit_mut(&format!("{prefix}.cand"), f);
                p.output.visit_mut(&format!("{prefix}.output"), f);
                blocks("forget", &mut p.forget, f);
                blocks("input", &mut p.input, f);
                if let Some(m) = &mut p.mix {
                    f(&format!("{prefix}.mix"), m);
                }
            }
            CellParams::MsGru(p) => {
                p.candidate.visit_mut(&format!("{prefix}.cand"), f);
                p.reset.visit_mut(&format!("{prefix}.reset"), f);
                blocks("update", &mut p.update, f);
                if let Some(m) = &mut p.mix {
                    f(&format!("{prefix}.mix"), m);
                }
            }
        }
    }
}

impl CellParams<Tensor> {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("cell", &mut |_, t| n += t.len());
        n
    }

    pub fn config(&self) -> CellConfig {
        let (bias, coupling) = match self {
            CellParams::Lstm(p) => (p.candidate.b.is_some(), GateCoupling::Independent),
            CellParams::Vlstm(p) => (p.candidate.b.is_some(), p.coupling),
            CellParams::MsGru(p) => (p.candidate.b.is_some(), GateCoupling::Independent),
        };
        CellConfig {
            arch: self.arch(),
            n_inputs: self.n_inputs(),
            hidden: self.hidden(),
            scales: self.scales(),
            bias: if bias { BiasMode::On } else { BiasMode::Off },
            coupling,
        }
    }

    /// Runs the cell from zero state over `[batch, N_x]` inputs.
    pub fn run(&self, inputs: &[Tensor]) -> Result<CellState<Tensor>> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("cannot unroll over an empty sequence"))?;
        let mut be = Eager;
        let mut state = self.zero_state(&mut be, first)?;
        for x in inputs {
            state = self.step(&mut be, x, &state)?;
        }
        Ok(state)
    }
}

/// Recurrent state: the cell output `h` plus one memory per timescale.
/// For the multi-scale GRU, `h` is the mixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<V> {
    pub h: V,
    pub scales: Vec<V>,
}

fn gate<B: Backend>(
    be: &mut B,
    g: &GateBlock<B::Value>,
    x: &B::Value,
    h: &B::Value,
) -> Result<B::Value> {
    let wx = be.linear(x, &g.w)?;
    let uh = be.linear(h, &g.u)?;
    let s = be.add(&wx, &uh)?;
    match &g.b {
        Some(b) => be.add_bias(&s, b),
        None => Ok(s),
    }
}

/// `f ⊙ c_prev + i ⊙ c̃`
fn ema_update<B: Backend>(
    be: &mut B,
    f: &B::Value,
    c_prev: &B::Value,
    i: &B::Value,
    cand: &B::Value,
) -> Result<B::Value> {
    let keep = be.mul(f, c_prev)?;
    let write = be.mul(i, cand)?;
    be.add(&keep, &write)
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_step<B: Backend>(
    be: &mut B,
    p: &LstmParams<B::Value>,
    x: &B::Value,
    h_prev: &B::Value,
    c_prev: &B::Value,
) -> Result<(B::Value, B::Value)> {
    let pre = gate(be, &p.candidate, x, h_prev)?;
    let cand = be.tanh(&pre)?;
    let pre = gate(be, &p.output, x, h_prev)?;
    let o = be.sigmoid(&pre)?;
    let pre = gate(be, &p.forget, x, h_prev)?;
    let f = be.sigmoid(&pre)?;
    let pre = gate(be, &p.input, x, h_prev)?;
    let i = be.sigmoid(&pre)?;
    let c = ema_update(be, &f, c_prev, &i, &cand)?;
    let squashed = be.tanh(&c)?;
    let h = be.mul(&o, &squashed)?;
    Ok((h, c))
}

/// Per-scale gates after the shared candidate; returns `(f, i)`.
pub fn vlstm_gates<B: Backend>(
    be: &mut B,
    p: &VlstmParams<B::Value>,
    k: usize,
    x: &B::Value,
    h_prev: &B::Value,
) -> Result<(B::Value, B::Value)> {
    let pre = gate(be, &p.forget[k], x, h_prev)?;
    let f = be.sigmoid(&pre)?;
    let i = match p.coupling {
        GateCoupling::Tied => be.one_minus(&f)?,
        GateCoupling::Independent => {
            let pre = gate(be, &p.input[k], x, h_prev)?;
            be.sigmoid(&pre)?
        }
    };
    Ok((f, i))
}

/// One VLSTM step; returns `(h_t, per-scale c_t, mixed c_t)`.
pub fn vlstm_step<B: Backend>(
    be: &mut B,
    p: &VlstmParams<B::Value>,
    x: &B::Value,
    h_prev: &B::Value,
    c_prev: &[B::Value],
) -> Result<(B::Value, Vec<B::Value>, B::Value)> {
    let n = p.forget.len();
    if c_prev.len() != n {
        return Err(invalid(format!(
            "VLSTM with {n} timescales got {} scale states",
            c_prev.len()
        )));
    }
    let pre = gate(be, &p.candidate, x, h_prev)?;
    let cand = be.tanh(&pre)?;
    let pre = gate(be, &p.output, x, h_prev)?;
    let o = be.sigmoid(&pre)?;
    let mut scales = Vec::with_capacity(n);
    for (k, c) in c_prev.iter().enumerate() {
        let (f, i) = vlstm_gates(be, p, k, x, h_prev)?;
        scales.push(ema_update(be, &f, c, &i, &cand)?);
    }
    let mixed = match (n, &p.mix) {
        (1, _) => scales[0].clone(),
        (2, Some(a)) => be.sigmoid_mix(&scales[0], &scales[1], a)?,
        (_, Some(logits)) => be.softmax_mix(&scales, logits)?,
        (_, None) => return Err(invalid("VLSTM with several timescales needs mixing weights")),
    };
    let squashed = be.tanh(&mixed)?;
    let h = be.mul(&o, &squashed)?;
    Ok((h, scales, mixed))
}

fn softmax_or_single<B: Backend>(
    be: &mut B,
    states: &[B::Value],
    mix: Option<&B::Value>,
) -> Result<B::Value> {
    match (states.len(), mix) {
        (1, _) => Ok(states[0].clone()),
        (_, Some(logits)) => be.softmax_mix(states, logits),
        (_, None) => Err(invalid("multi-scale GRU needs mixing weights")),
    }
}

/// One multi-scale GRU step; returns `(per-scale c_t, mixed c_t)`.
///
/// Reset and candidate read the previous mixed state.
pub fn msgru_step<B: Backend>(
    be: &mut B,
    p: &MsGruParams<B::Value>,
    x: &B::Value,
    c_prev: &[B::Value],
) -> Result<(Vec<B::Value>, B::Value)> {
    let n = p.update.len();
    if c_prev.len() != n {
        return Err(invalid(format!(
            "multi-scale GRU with {n} timescales got {} scale states",
            c_prev.len()
        )));
    }
    let mixed_prev = softmax_or_single(be, c_prev, p.mix.as_ref())?;
    let pre = gate(be, &p.reset, x, &mixed_prev)?;
    let r = be.sigmoid(&pre)?;
    let gated = be.mul(&mixed_prev, &r)?;
    let pre = gate(be, &p.candidate, x, &gated)?;
    let cand = be.tanh(&pre)?;
    let mut scales = Vec::with_capacity(n);
    for (k, c) in c_prev.iter().enumerate() {
        let pre = gate(be, &p.update[k], x, c)?;
        let lambda = be.sigmoid(&pre)?;
        let keep = be.one_minus(&lambda)?;
        scales.push(ema_update(be, &keep, c, &lambda, &cand)?);
    }
    let mixed = softmax_or_single(be, &scales, p.mix.as_ref())?;
    Ok((scales, mixed))
}

impl<V: Clone> CellParams<V> {
    pub fn zero_state<B: Backend<Value = V>>(&self, be: &mut B, like: &V) -> Result<CellState<V>> {
        let hidden = self.hidden();
        let h = be.zeros_rows(like, hidden)?;
        let scales = (0..self.scales())
            .map(|_| be.zeros_rows(like, hidden))
            .collect::<Result<_>>()?;
        Ok(CellState { h, scales })
    }

    pub fn step<B: Backend<Value = V>>(
        &self,
        be: &mut B,
        x: &V,
        state: &CellState<V>,
    ) -> Result<CellState<V>> {
        match self {
            CellParams::Lstm(p) => {
                let (h, c) = lstm_step(be, p, x, &state.h, &state.scales[0])?;
                Ok(CellState { h, scales: vec![c] })
            }
            CellParams::Vlstm(p) => {
                let (h, scales, _) = vlstm_step(be, p, x, &state.h, &state.scales)?;
                Ok(CellState { h, scales })
            }
            CellParams::MsGru(p) => {
                let (scales, mixed) = msgru_step(be, p, x, &state.scales)?;
                Ok(CellState { h: mixed, scales })
            }
        }
    }
}

/// Draws Glorot-uniform input weights, orthogonal recurrent weights and
/// zero biases.
fn init_block<R: Rng>(rng: &mut R, n_inputs: usize, hidden: usize, bias: BiasMode, bias_value: f64) -> GateBlock {
    let w = glorot_uniform(rng, hidden, n_inputs);
    let u = orthogonal(rng, hidden);
    let b = match bias {
        BiasMode::On => Some(Tensor::filled(&[hidden], bias_value)),
        BiasMode::Off => None,
    };
    GateBlock { w, u, b }
}

/// `[rows, cols]` uniform on `±√(6/(rows+cols))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s);
    let data = (0..rows * cols).map(|_| rng.sample(dist)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Square orthogonal matrix from the QR factorization of a Gaussian draw.
pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Tensor {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::matrix(n, n, data).expect("shape")
}

const FORGET_BIAS: f64 = 1.0;

/// Initializes a cell from an existing random stream.
///
/// Blocks are drawn in a fixed order (candidate, output, then forget and
/// input per scale) so a one-scale VLSTM and an LSTM built from the same
/// stream have identical weights.
pub fn init_cell<R: Rng>(cfg: &CellConfig, rng: &mut R) -> Result<CellParams> {
    cfg.validate()?;
    let (nx, nh, bias) = (cfg.n_inputs, cfg.hidden, cfg.bias);
    Ok(match cfg.arch {
        Architecture::Lstm => {
            let candidate = init_block(rng, nx, nh, bias, 0.0);
            let output = init_block(rng, nx, nh, bias, 0.0);
            let forget = init_block(rng, nx, nh, bias, FORGET_BIAS);
            let input = init_block(rng, nx, nh, bias, 0.0);
            CellParams::Lstm(LstmParams {
                candidate,
                output,
                forget,
                input,
                n_inputs: nx,
                hidden: nh,
            })
        }
        Architecture::Vlstm => {
            let candidate = init_block(rng, nx, nh, bias, 0.0);
            let output = init_block(rng, nx, nh, bias, 0.0);
            let mut forget = Vec::new();
            let mut input = Vec::new();
            for _ in 0..cfg.scales {
                forget.push(init_block(rng, nx, nh, bias, FORGET_BIAS));
                if cfg.coupling == GateCoupling::Independent {
                    input.push(init_block(rng, nx, nh, bias, 0.0));
                }
            }
            let mix = match cfg.scales {
                1 => None,
                2 => Some(Tensor::zeros(&[nh])),
                n => Some(Tensor::zeros(&[n, nh])),
            };
            CellParams::Vlstm(VlstmParams {
                candidate,
                output,
                forget,
                input,
                mix,
                coupling: cfg.coupling,
                n_inputs: nx,
                hidden: nh,
            })
        }
        Architecture::MsGru => {
            let candidate = init_block(rng, nx, nh, bias, 0.0);
            let reset = init_block(rng, nx, nh, bias, 0.0);
            let update = (0..cfg.scales)
                .map(|_| init_block(rng, nx, nh, bias, 0.0))
                .collect();
            let mix = (cfg.scales > 1).then(|| Tensor::zeros(&[cfg.scales, nh]));
            CellParams::MsGru(MsGruParams {
                candidate,
                reset,
                update,
                mix,
                n_inputs: nx,
                hidden: nh,
            })
        }
    })
}

/// Deterministic initialization from a seed.
pub fn init_params(cfg: &CellConfig, seed: u64) -> Result<CellParams> {
    init_cell(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}
