//! Dense and 1-D convolutional layer algebra with hand-derived gradients,
//! the losses used by the multi-task heads, Adam, and a finite-difference
//! gradient checker.
//!
//! All arithmetic is `f64`. Layers are stateless functions over parameter
//! tensors; backward functions accumulate into caller-owned gradient tensors
//! so a mini-batch can be summed example by example.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("conv1d: input length {len} shorter than kernel {kernel}")]
    InputTooShort { len: usize, kernel: usize },
    #[error("class index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

/// Row-major n-d array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// dense

/// `y = W x + b` with `W: [out, in]`.
pub fn dense(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>, NnError> {
    let [out, inp] = w.shape() else {
        return Err(shape_err("dense", format!("weight must be 2-d, got {:?}", w.shape())));
    };
    if x.len() != *inp || b.len() != *out {
        return Err(shape_err(
            "dense",
            format!("W {:?}, x {}, b {}", w.shape(), x.len(), b.len()),
        ));
    }
    Ok(w.data()
        .chunks_exact(*inp)
        .zip(b.data())
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Accumulates `dW += dy x^T`, `db += dy`; returns `dx = W^T dy`.
pub fn dense_backward(x: &[f64], w: &Tensor, dy: &[f64], dw: &mut Tensor, db: &mut Tensor) -> Vec<f64> {
    let inp = x.len();
    let mut dx = vec![0.0; inp];
    for (o, &g) in dy.iter().enumerate() {
        db.data[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w.data[o * inp..(o + 1) * inp];
        let drow = &mut dw.data[o * inp..(o + 1) * inp];
        for i in 0..inp {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// conv1d

/// Valid cross-correlation, stride 1: `x: [c_in, L]`, `k: [c_out, c_in, ks]`,
/// output `[c_out, L - ks + 1]`.
pub fn conv1d_valid(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let ([c_in, len], [c_out, k_in, ks]) = (x.shape(), k.shape()) else {
        return Err(shape_err(
            "conv1d",
            format!("x {:?} must be 2-d and kernel {:?} 3-d", x.shape(), k.shape()),
        ));
    };
    let (c_in, len, c_out, ks) = (*c_in, *len, *c_out, *ks);
    if *k_in != c_in || b.len() != c_out {
        return Err(shape_err(
            "conv1d",
            format!("x {:?}, kernel {:?}, bias {}", x.shape(), k.shape(), b.len()),
        ));
    }
    if len < ks {
        return Err(NnError::InputTooShort { len, kernel: ks });
    }
    let out_len = len - ks + 1;
    let mut y = Tensor::zeros(&[c_out, out_len]);
    for co in 0..c_out {
        let yrow = &mut y.data[co * out_len..(co + 1) * out_len];
        yrow.iter_mut().for_each(|v| *v = b.data[co]);
        for ci in 0..c_in {
            let xrow = &x.data[ci * len..(ci + 1) * len];
            for j in 0..ks {
                let kv = k.data[(co * c_in + ci) * ks + j];
                for (yv, xv) in yrow.iter_mut().zip(&xrow[j..j + out_len]) {
                    *yv += kv * xv;
                }
            }
        }
    }
    Ok(y)
}

/// Accumulates kernel and bias gradients; returns `dL/dx`.
pub fn conv1d_backward(x: &Tensor, k: &Tensor, dy: &Tensor, dk: &mut Tensor, db: &mut Tensor) -> Tensor {
    let (c_in, len) = (x.shape[0], x.shape[1]);
    let (c_out, ks) = (k.shape[0], k.shape[2]);
    let out_len = dy.shape[1];
    let mut dx = Tensor::zeros(&[c_in, len]);
    for co in 0..c_out {
        let dyrow = &dy.data[co * out_len..(co + 1) * out_len];
        db.data[co] += dyrow.iter().sum::<f64>();
        for ci in 0..c_in {
            let xrow = &x.data[ci * len..(ci + 1) * len];
            let dxrow = &mut dx.data[ci * len..(ci + 1) * len];
            for j in 0..ks {
                let kidx = (co * c_in + ci) * ks + j;
                let kv = k.data[kidx];
                let mut acc = 0.0;
                for ((g, xv), dxv) in dyrow.iter().zip(&xrow[j..j + out_len]).zip(&mut dxrow[j..j + out_len]) {
                    acc += g * xv;
                    *dxv += kv * g;
                }
                dk.data[kidx] += acc;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// maxpool

/// Max pooling with window 2 and stride 2 over `[C, L]`; a trailing odd
/// element is dropped. Returns the pooled tensor and the flat input index of
/// each maximum (ties go to the lower index).
pub fn maxpool1d(x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let [c, len] = x.shape() else {
        return Err(shape_err("maxpool1d", format!("input must be 2-d, got {:?}", x.shape())));
    };
    let (c, len) = (*c, *len);
    if len < 2 {
        return Err(shape_err("maxpool1d", format!("length {len} < 2")));
    }
    let out_len = len / 2;
    let mut y = Tensor::zeros(&[c, out_len]);
    let mut argmax = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        for t in 0..out_len {
            let i = ch * len + 2 * t;
            let (a, b) = (x.data[i], x.data[i + 1]);
            let pick = if b > a { i + 1 } else { i };
            y.data[ch * out_len + t] = x.data[pick];
            argmax.push(pick);
        }
    }
    Ok((y, argmax))
}

/// Routes each output gradient to its argmax position.
pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data[i] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// activations and losses

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient passes where the pre-activation is strictly positive.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[label]`, with `p` clamped at 1e-12.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64, NnError> {
    let pl = p.get(label).ok_or(NnError::LabelOutOfRange {
        label,
        classes: p.len(),
    })?;
    Ok(-pl.max(PROB_FLOOR).ln())
}

/// Gradient of softmax followed by cross-entropy w.r.t. the logits: `p - onehot(label)`.
pub fn softmax_cross_entropy_grad(p: &[f64], label: usize) -> Result<Vec<f64>, NnError> {
    if label >= p.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: p.len(),
        });
    }
    let mut g = p.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

/// Squared error and its derivative w.r.t. the prediction.
pub fn mse(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    (d * d, 2.0 * d)
}

/// Mean squared error over a batch of `(pred, target)` pairs.
pub fn mse_batch(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(p, t)| mse(p, t).0).sum::<f64>() / pairs.len() as f64
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. The step counter is
/// incremented before the update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(shape_err(
            "adam",
            format!("params {}, grads {}, state {}", params.len(), grads.len(), state.m.len()),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient { tensor: 0 });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            states: params.iter().map(|p| AdamState::new(p.len())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Checks every gradient before touching any parameter, so a non-finite
    /// gradient leaves the model unchanged.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.states.len() {
            return Err(shape_err(
                "adam",
                format!("{} params, {} grads, {} states", params.len(), grads.len(), self.states.len()),
            ));
        }
        if let Some(tensor) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { tensor });
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            adam_step(&mut p.data, &g.data, s, lr, &self.config)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// gradient checking

/// Denominator floor for relative error, so coordinates whose true gradient
/// is ~0 are judged on absolute error at this scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates passed over because the perturbation crossed a kink.
    pub skipped: usize,
}

/// Picks `n` distinct coordinates out of `total` (all of them when `n >= total`).
pub fn sample_coordinates(total: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares `analytic` against central differences of `loss` at the given
/// coordinates of `params`.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], mut loss: F, h: f64, coords: &[usize]) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &i in coords {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss(&work);
        work[i] = orig - h;
        let minus = loss(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.checked == 1 {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report
}
