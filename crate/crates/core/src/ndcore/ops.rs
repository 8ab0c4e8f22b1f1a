//! Forward and backward kernels for the closed primitive set.
//!
//! Activations are `[batch, features]` matrices. Weight matrices follow the
//! `[out, in]` convention so `linear(x, w) = x · wᵀ`. Bias and mixing vectors
//! are rank-1 and broadcast over rows.

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape {
        context: op.to_string(),
        detail,
    }
}

fn matrix_dims(op: &str, what: &str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| shape_err(op, format!("{what} must be a matrix, got {:?}", t.shape())))
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn row_vector(op: &str, x: &Tensor, v: &Tensor) -> Result<(usize, usize)> {
    let (rows, cols) = matrix_dims(op, "input", x)?;
    if v.shape() != [cols] {
        return Err(shape_err(
            op,
            format!("vector {:?} does not match {} columns", v.shape(), cols),
        ));
    }
    Ok((rows, cols))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn linear(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, k) = matrix_dims("linear", "input", x)?;
    let (n, kw) = matrix_dims("linear", "weight", w)?;
    if k != kw {
        return Err(shape_err(
            "linear",
            format!("input {:?} incompatible with weight {:?}", x.shape(), w.shape()),
        ));
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; b * n];
    for r in 0..b {
        let xr = &xd[r * k..(r + 1) * k];
        for j in 0..n {
            let wr = &wd[j * k..(j + 1) * k];
            out[r * n + j] = xr.iter().zip(wr).map(|(a, c)| a * c).sum();
        }
    }
    Tensor::new(vec![b, n], out)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (b, k) = x.dims2().expect("checked in forward");
    let n = w.shape()[0];
    let (xd, wd, g) = (x.data(), w.data(), dy.data());
    let mut dx = vec![0.0; b * k];
    let mut dw = vec![0.0; n * k];
    for r in 0..b {
        for j in 0..n {
            let gy = g[r * n + j];
            if gy == 0.0 {
                continue;
            }
            for c in 0..k {
                dx[r * k + c] += gy * wd[j * k + c];
                dw[j * k + c] += gy * xd[r * k + c];
            }
        }
    }
    (
        Tensor::new(vec![b, k], dx).expect("shape"),
        Tensor::new(vec![n, k], dw).expect("shape"),
    )
}

pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, cols) = row_vector("add_bias", x, bias)?;
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += bias.data()[i % cols];
    }
    Ok(out)
}

pub fn sum_rows(dy: &Tensor) -> Tensor {
    let (_, cols) = dy.dims2().expect("matrix");
    let mut acc = vec![0.0; cols];
    for (i, v) in dy.data().iter().enumerate() {
        acc[i % cols] += v;
    }
    Tensor::vector(acc)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn one_minus(a: &Tensor) -> Tensor {
    a.map(|v| 1.0 - v)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

/// `σ(l)·a + σ(−l)·b`, per column. Saturated logits select one input
/// exactly.
pub fn sigmoid_mix(a: &Tensor, b: &Tensor, logit: &Tensor) -> Result<Tensor> {
    same_shape("sigmoid_mix", a, b)?;
    let (_, cols) = row_vector("sigmoid_mix", a, logit)?;
    let alpha: Vec<f64> = logit.data().iter().map(|&l| sigmoid_scalar(l)).collect();
    let beta: Vec<f64> = logit.data().iter().map(|&l| sigmoid_scalar(-l)).collect();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (x, y))| alpha[i % cols] * x + beta[i % cols] * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn sigmoid_mix_backward(
    a: &Tensor,
    b: &Tensor,
    logit: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let cols = logit.len();
    let alpha: Vec<f64> = logit.data().iter().map(|&l| sigmoid_scalar(l)).collect();
    let beta: Vec<f64> = logit.data().iter().map(|&l| sigmoid_scalar(-l)).collect();
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; a.len()];
    let mut dl = vec![0.0; cols];
    for (i, &g) in dy.data().iter().enumerate() {
        let j = i % cols;
        da[i] = alpha[j] * g;
        db[i] = beta[j] * g;
        dl[j] += g * (a.data()[i] - b.data()[i]) * alpha[j] * beta[j];
    }
    (
        Tensor::new(a.shape().to_vec(), da).expect("shape"),
        Tensor::new(a.shape().to_vec(), db).expect("shape"),
        Tensor::vector(dl),
    )
}

/// Column-wise softmax of `[n, cols]` logits.
pub fn softmax_columns(logits: &Tensor) -> Vec<f64> {
    let (n, cols) = logits.dims2().expect("matrix");
    let mut w = vec![0.0; n * cols];
    for j in 0..cols {
        let m = (0..n)
            .map(|k| logits.at2(k, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..n {
            let e = (logits.at2(k, j) - m).exp();
            w[k * cols + j] = e;
            z += e;
        }
        for k in 0..n {
            w[k * cols + j] /= z;
        }
    }
    w
}

/// `Σ_k softmax(logits)[k] ⊙ states[k]`, weights normalized per column.
pub fn softmax_mix(states: &[&Tensor], logits: &Tensor) -> Result<Tensor> {
    let first = states
        .first()
        .ok_or_else(|| shape_err("softmax_mix", "no states".into()))?;
    for s in states {
        same_shape("softmax_mix", first, s)?;
    }
    let (_, cols) = matrix_dims("softmax_mix", "state", first)?;
    if logits.shape() != [states.len(), cols] {
        return Err(shape_err(
            "softmax_mix",
            format!(
                "logits {:?} do not match {} states of width {}",
                logits.shape(),
                states.len(),
                cols
            ),
        ));
    }
    let w = softmax_columns(logits);
    let mut out = vec![0.0; first.len()];
    for (k, s) in states.iter().enumerate() {
        for (i, v) in s.data().iter().enumerate() {
            out[i] += w[k * cols + i % cols] * v;
        }
    }
    Tensor::new(first.shape().to_vec(), out)
}

pub fn softmax_mix_backward(
    states: &[&Tensor],
    logits: &Tensor,
    out: &Tensor,
    dy: &Tensor,
) -> (Vec<Tensor>, Tensor) {
    let cols = logits.shape()[1];
    let w = softmax_columns(logits);
    let mut dlogits = vec![0.0; logits.len()];
    let dstates = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut ds = vec![0.0; s.len()];
            for (i, &g) in dy.data().iter().enumerate() {
                let j = i % cols;
                let wk = w[k * cols + j];
                ds[i] = wk * g;
                dlogits[k * cols + j] += g * wk * (s.data()[i] - out.data()[i]);
            }
            Tensor::new(s.shape().to_vec(), ds).expect("shape")
        })
        .collect();
    (
        dstates,
        Tensor::new(logits.shape().to_vec(), dlogits).expect("shape"),
    )
}

/// Mean squared error as a rank-0 tensor.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("mse", pred, target)?;
    if pred.is_empty() {
        return Err(shape_err("mse", "empty operands".into()));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(Tensor::scalar(s / pred.len() as f64))
}

pub fn mse_backward(pred: &Tensor, target: &Tensor, dl: f64) -> (Tensor, Tensor) {
    let scale = 2.0 * dl / pred.len() as f64;
    let dp: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    let dt = dp.iter().map(|v| -v).collect();
    (
        Tensor::new(pred.shape().to_vec(), dp).expect("shape"),
        Tensor::new(pred.shape().to_vec(), dt).expect("shape"),
    )
}

pub fn zeros_rows(like: &Tensor, cols: usize) -> Result<Tensor> {
    let (rows, _) = matrix_dims("zeros_rows", "reference", like)?;
    Ok(Tensor::zeros(&[rows, cols]))
}

/// Operations the recurrent cells are written against.
///
/// The eager implementation computes values directly; the graph
/// implementation records nodes for later evaluation and differentiation.
pub trait Backend {
    type Value: Clone;

    fn linear(&mut self, x: &Self::Value, w: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&mut self, x: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn one_minus(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid_mix(
        &mut self,
        a: &Self::Value,
        b: &Self::Value,
        logit: &Self::Value,
    ) -> Result<Self::Value>;
    fn softmax_mix(&mut self, states: &[Self::Value], logits: &Self::Value)
        -> Result<Self::Value>;
    /// Zero matrix with the row count of `like` and `cols` columns.
    fn zeros_rows(&mut self, like: &Self::Value, cols: usize) -> Result<Self::Value>;
}

/// Direct evaluation on tensors.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn linear(&mut self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        linear(x, w)
    }
    fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        add_bias(x, b)
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        add(a, b)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        mul(a, b)
    }
    fn one_minus(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(one_minus(a))
    }
    fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(sigmoid(a))
    }
    fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(tanh(a))
    }
    fn sigmoid_mix(&mut self, a: &Tensor, b: &Tensor, logit: &Tensor) -> Result<Tensor> {
        sigmoid_mix(a, b, logit)
    }
    fn softmax_mix(&mut self, states: &[Tensor], logits: &Tensor) -> Result<Tensor> {
        let refs: Vec<&Tensor> = states.iter().collect();
        softmax_mix(&refs, logits)
    }
    fn zeros_rows(&mut self, like: &Tensor, cols: usize) -> Result<Tensor> {
        zeros_rows(like, cols)
    }
}
