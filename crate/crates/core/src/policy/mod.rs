//! Unsupervised policy network mapping channels to powers and RIS phases.
//!
//! The network is a stack of `ReLU(BN(W x + b))` hidden layers followed by
//! two sigmoid heads. Power outputs pass through a softmax scaled by the
//! budget and phase outputs are stretched to `[0, 2 pi)`, so every output is
//! feasible regardless of the weights. Training minimises the negated mean
//! weighted sum rate of a minibatch, differentiated end to end through the
//! MMSE beam directions.

mod adam;
mod checkpoint;
mod train;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, train_with, EpochLog, TrainConfig, TrainOutcome};

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::autodiff::{gemm, grad_check, sigmoid, softmax_in_place, AutodiffError, BatchStats, GradCheckReport, Tape, Tensor, Var};
use crate::linalg::{CMat, CVec, C64};
use crate::transmit::{
    self, weighted_sum_rate_var, BeamformerSet, ChannelBatch, ChannelSet, Dims, PhaseVector, PowerVector, TransmitError,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has {have} samples, a minibatch needs {need}")]
    DatasetTooSmall { have: usize, need: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Transmit(#[from] TransmitError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 128];

/// Batches up to this size skip the packed matrix product.
const DIRECT_ROWS: usize = 4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(u, v)| u * v).sum();
    for (u, v) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += u[i] * v[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Fully connected map `y = W x + b`, `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `out[r] = W x[r] + b` for `rows` stacked inputs.
    fn apply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (fin, fout) = (self.fan_in(), self.fan_out());
        if rows <= DIRECT_ROWS {
            // packing the weights costs more than the product itself
            let w = self.weight.data();
            return x
                .chunks_exact(fin)
                .flat_map(|xr| w.chunks_exact(fin).zip(self.bias.data()).map(move |(wr, b)| b + dot(wr, xr)))
                .collect();
        }
        let mut out = Vec::with_capacity(rows * fout);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm(rows, fin, fout, x, (fin, 1), self.weight.data(), (1, fin), &mut out, 1.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    /// Unbiased running variance.
    pub running_var: Vec<f64>,
}

/// Network weights, batch-norm running statistics and the instance sizes
/// they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    dims: Dims,
    hidden: Vec<HiddenLayer>,
    power_head: Dense,
    phase_head: Dense,
}

impl MLPParams {
    /// He-normal hidden weights, Glorot-uniform heads, zero biases, unit
    /// batch-norm scale.
    pub fn init<R: Rng + ?Sized>(dims: Dims, widths: &[usize], rng: &mut R) -> Result<Self> {
        if dims.k == 0 || dims.n == 0 || dims.n_t == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(PolicyError::InvalidConfig(format!("dims {dims:?}, hidden widths {widths:?}")));
        }
        let mut fin = dims.input_len();
        let mut hidden = Vec::with_capacity(widths.len());
        for &w in widths {
            let nd = Normal::new(0.0, (2.0 / fin as f64).sqrt()).expect("positive std");
            let weight = (0..w * fin).map(|_| nd.sample(rng)).collect();
            hidden.push(HiddenLayer {
                dense: Dense { weight: Tensor::new(vec![w, fin], weight)?, bias: Tensor::zeros(&[w]) },
                gamma: Tensor::new(vec![w], vec![1.0; w])?,
                beta: Tensor::zeros(&[w]),
                running_mean: vec![0.0; w],
                running_var: vec![1.0; w],
            });
            fin = w;
        }
        let mut head = |fout: usize| -> Result<Dense> {
            let lim = (6.0 / (fin + fout) as f64).sqrt();
            let ud = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
            let weight = (0..fout * fin).map(|_| ud.sample(rng)).collect();
            Ok(Dense { weight: Tensor::new(vec![fout, fin], weight)?, bias: Tensor::zeros(&[fout]) })
        };
        let power_head = head(dims.k)?;
        let phase_head = head(dims.n)?;
        Ok(Self { dims, hidden, power_head, phase_head })
    }

    /// Assembles parameters from parts, checking that layer sizes chain.
    pub fn from_parts(dims: Dims, hidden: Vec<HiddenLayer>, power_head: Dense, phase_head: Dense) -> Result<Self> {
        let check = |d: &Dense, fin: usize, fout: Option<usize>| -> Result<usize> {
            let s = d.weight.shape();
            if s.len() != 2 || s[1] != fin || d.bias.shape() != [s[0]] || fout.is_some_and(|f| f != s[0]) {
                return Err(PolicyError::Dimension(format!("layer weight {s:?} bias {:?} after width {fin}", d.bias.shape())));
            }
            Ok(s[0])
        };
        if hidden.is_empty() {
            return Err(PolicyError::InvalidConfig("at least one hidden layer".into()));
        }
        let mut fin = dims.input_len();
        for layer in &hidden {
            let w = check(&layer.dense, fin, None)?;
            if layer.gamma.shape() != [w] || layer.beta.shape() != [w] || layer.running_mean.len() != w || layer.running_var.len() != w {
                return Err(PolicyError::Dimension(format!("batch-norm sizes for width {w}")));
            }
            fin = w;
        }
        check(&power_head, fin, Some(dims.k))?;
        check(&phase_head, fin, Some(dims.n))?;
        Ok(Self { dims, hidden, power_head, phase_head })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.dense.fan_out()).collect()
    }

    pub fn hidden(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [HiddenLayer] {
        &mut self.hidden
    }

    pub fn power_head(&self) -> &Dense {
        &self.power_head
    }

    pub fn phase_head(&self) -> &Dense {
        &self.phase_head
    }

    /// Trainable tensors in canonical order: per hidden layer `W, b, gamma,
    /// beta`, then the power head `W, b` and the phase head `W, b`.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 4);
        for l in &self.hidden {
            out.extend([&l.dense.weight, &l.dense.bias, &l.gamma, &l.beta]);
        }
        out.extend([&self.power_head.weight, &self.power_head.bias, &self.phase_head.weight, &self.phase_head.bias]);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(4 * self.hidden.len() + 4);
        for l in &mut self.hidden {
            out.extend([&mut l.dense.weight, &mut l.dense.bias, &mut l.gamma, &mut l.beta]);
        }
        out.extend([&mut self.power_head.weight, &mut self.power_head.bias, &mut self.phase_head.weight, &mut self.phase_head.bias]);
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Trainable values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.trainable().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn bind<'t>(&self, tape: &'t Tape, flat: Option<Var<'t>>) -> Result<Vec<Var<'t>>> {
        match flat {
            None => Ok(self.trainable().into_iter().map(|t| tape.leaf(t.clone())).collect()),
            Some(x) => {
                let mut start = 0;
                let mut out = Vec::new();
                for t in self.trainable() {
                    out.push(x.slice(start, t.shape())?);
                    start += t.len();
                }
                Ok(out)
            }
        }
    }

    fn update_running_stats(&mut self, stats: &[BatchStats], batch: usize) {
        let correction = if batch > 1 { batch as f64 / (batch - 1) as f64 } else { 1.0 };
        for (layer, s) in self.hidden.iter_mut().zip(stats) {
            for j in 0..layer.running_mean.len() {
                layer.running_mean[j] = BN_MOMENTUM * layer.running_mean[j] + (1.0 - BN_MOMENTUM) * s.mean[j];
                layer.running_var[j] = BN_MOMENTUM * layer.running_var[j] + (1.0 - BN_MOMENTUM) * s.var[j] * correction;
            }
        }
    }
}

/// Length of the real network input for `dims`.
pub fn input_len(dims: Dims) -> usize {
    dims.input_len()
}

/// `(re, im)` pairs of `H` row-major, then `h_1..h_K`, then `g_1..g_K`.
pub fn vectorize_input(ch: &ChannelSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(ch.dims().input_len());
    let push = |out: &mut Vec<f64>, zs: &[C64]| out.extend(zs.iter().flat_map(|z| [z.re, z.im]));
    push(&mut out, ch.h_tr.as_slice());
    for h in &ch.h_ru {
        push(&mut out, h.as_slice());
    }
    for g in &ch.g {
        push(&mut out, g.as_slice());
    }
    out
}

/// Inverse of [`vectorize_input`]; the non-channel fields are supplied.
pub fn devectorize(x: &[f64], dims: Dims, sigma2: Vec<f64>, user_weight: Vec<f64>, p_max: f64) -> Result<ChannelSet> {
    if x.len() != dims.input_len() {
        return Err(PolicyError::Dimension(format!("input of length {} for {dims:?}", x.len())));
    }
    let mut zs = x.chunks_exact(2).map(|c| C64::new(c[0], c[1]));
    let mut take = |n: usize| -> Vec<C64> { zs.by_ref().take(n).collect() };
    let h_tr = CMat::from_vec(dims.n, dims.n_t, take(dims.n * dims.n_t)).map_err(TransmitError::from)?;
    let h_ru = (0..dims.k).map(|_| CVec::new(take(dims.n))).collect::<std::result::Result<_, _>>().map_err(TransmitError::from)?;
    let g = (0..dims.k).map(|_| CVec::new(take(dims.n_t))).collect::<std::result::Result<_, _>>().map_err(TransmitError::from)?;
    Ok(ChannelSet::new(h_tr, h_ru, g, sigma2, user_weight, p_max)?)
}

/// Stacks vectorised inputs into an `[M, a1]` tensor.
pub fn stack_inputs(sets: &[&ChannelSet]) -> Result<Tensor> {
    let first = sets.first().ok_or_else(|| PolicyError::Dimension("empty batch".into()))?;
    let a1 = first.dims().input_len();
    let mut data = Vec::with_capacity(sets.len() * a1);
    for ch in sets {
        if ch.dims() != first.dims() {
            return Err(PolicyError::Dimension(format!("batch mixes {:?} and {:?}", first.dims(), ch.dims())));
        }
        data.extend(vectorize_input(ch));
    }
    Ok(Tensor::new(vec![sets.len(), a1], data)?)
}

/// Source of batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Statistics of the current batch.
    Train,
    /// Running statistics accumulated during training.
    Infer,
}

/// Sigmoid head outputs for `M` stacked inputs: `raw_p` is `[M, K]`,
/// `raw_phi` is `[M, N]`, both strictly inside `(0, 1)` up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutputs {
    pub raw_p: Vec<f64>,
    pub raw_phi: Vec<f64>,
}

struct TapedForward<'t> {
    raw_p: Var<'t>,
    raw_phi: Var<'t>,
    stats: Vec<BatchStats>,
}

fn forward_taped<'t>(params: &[Var<'t>], x: Var<'t>) -> Result<TapedForward<'t>> {
    let layers = (params.len() - 4) / 4;
    let mut d = x;
    let mut stats = Vec::with_capacity(layers);
    for l in 0..layers {
        let p = &params[4 * l..4 * l + 4];
        let (bn, s) = d.linear(&p[0], &p[1])?.batchnorm_train(&p[2], &p[3], BN_EPS)?;
        stats.push(s);
        d = bn.relu();
    }
    let h = &params[4 * layers..];
    Ok(TapedForward { raw_p: d.linear(&h[0], &h[1])?.sigmoid(), raw_phi: d.linear(&h[2], &h[3])?.sigmoid(), stats })
}

fn check_input(params: &MLPParams, x: &Tensor) -> Result<usize> {
    let a1 = params.dims.input_len();
    match x.shape() {
        [m, a] if *a == a1 && *m > 0 => Ok(*m),
        s => Err(PolicyError::Dimension(format!("input {s:?}, expected [M, {a1}]"))),
    }
}

fn forward_infer(params: &MLPParams, x: &[f64], rows: usize) -> RawOutputs {
    let mut d = x.to_vec();
    for layer in &params.hidden {
        let w = layer.dense.fan_out();
        let mut y = layer.dense.apply(&d, rows);
        let scale: Vec<f64> = (0..w).map(|j| layer.gamma.data()[j] / (layer.running_var[j] + BN_EPS).sqrt()).collect();
        for row in y.chunks_exact_mut(w) {
            for j in 0..w {
                row[j] = ((row[j] - layer.running_mean[j]) * scale[j] + layer.beta.data()[j]).max(0.0);
            }
        }
        d = y;
    }
    let mut raw_p = params.power_head.apply(&d, rows);
    let mut raw_phi = params.phase_head.apply(&d, rows);
    raw_p.iter_mut().chain(raw_phi.iter_mut()).for_each(|v| *v = sigmoid(*v));
    RawOutputs { raw_p, raw_phi }
}

/// Network forward pass over `[M, a1]` inputs.
pub fn forward(params: &MLPParams, x: &Tensor, mode: Mode) -> Result<RawOutputs> {
    let m = check_input(params, x)?;
    match mode {
        Mode::Infer => Ok(forward_infer(params, x.data(), m)),
        Mode::Train => {
            let tape = Tape::new();
            let vars = params.bind(&tape, None)?;
            let out = forward_taped(&vars, tape.constant(x.clone()))?;
            Ok(RawOutputs { raw_p: out.raw_p.value().into_data(), raw_phi: out.raw_phi.value().into_data() })
        }
    }
}

/// `p = softmax(raw_p) p_max`, `phi = 2 pi raw_phi` wrapped into `[0, 2 pi)`.
pub fn normalize_outputs(raw_p: &[f64], raw_phi: &[f64], p_max: f64) -> Result<(PowerVector, PhaseVector)> {
    if raw_p.is_empty() || raw_phi.is_empty() || raw_p.iter().chain(raw_phi).any(|v| !v.is_finite()) {
        return Err(PolicyError::Dimension("head outputs must be non-empty and finite".into()));
    }
    let mut p = raw_p.to_vec();
    softmax_in_place(&mut p);
    p.iter_mut().for_each(|v| *v *= p_max);
    let phases: Vec<f64> = raw_phi.iter().map(|v| TAU * v).collect();
    Ok((PowerVector::new(p, p_max)?, PhaseVector::wrapped(&phases)))
}

fn taped_loss<'t>(tape: &'t Tape, vars: &[Var<'t>], batch: &ChannelBatch, x: &Tensor) -> Result<(Var<'t>, Vec<BatchStats>)> {
    let out = forward_taped(vars, tape.constant(x.clone()))?;
    let p = out.raw_p.softmax()?.mul(&tape.constant(batch.p_max().clone()))?;
    let phi = out.raw_phi.scale(TAU);
    let wsr = weighted_sum_rate_var(tape, batch, p, phi)?;
    Ok((wsr.mean().neg(), out.stats))
}

/// Negated mean weighted sum rate of the batch under train-mode batch norm.
pub fn loss(params: &MLPParams, sets: &[&ChannelSet]) -> Result<f64> {
    let batch = ChannelBatch::new(sets)?;
    let x = stack_inputs(sets)?;
    check_input(params, &x)?;
    let tape = Tape::new();
    let vars = params.bind(&tape, None)?;
    Ok(taped_loss(&tape, &vars, &batch, &x)?.0.item())
}

/// Loss and its gradient with respect to every trainable tensor, in the
/// order of [`MLPParams::trainable`].
pub fn loss_and_gradients(params: &MLPParams, batch: &ChannelBatch, x: &Tensor) -> Result<(f64, Vec<Tensor>, Vec<BatchStats>)> {
    if check_input(params, x)? != batch.len() || batch.dims() != params.dims {
        return Err(PolicyError::Dimension("inputs, channels and network disagree".into()));
    }
    let tape = Tape::new();
    let vars = params.bind(&tape, None)?;
    let (l, stats) = taped_loss(&tape, &vars, batch, x)?;
    let grads = l.backward()?;
    Ok((l.item(), vars.iter().map(|v| grads.wrt(v)).collect(), stats))
}

/// Central-difference check of the loss gradient with respect to all
/// trainable parameters.
pub fn gradient_check(params: &MLPParams, sets: &[&ChannelSet], step: f64, tol: f64) -> Result<GradCheckReport> {
    let batch = ChannelBatch::new(sets)?;
    let x = stack_inputs(sets)?;
    check_input(params, &x)?;
    let theta = Tensor::vector(params.flatten());
    let report = grad_check(
        |tape, flat| {
            let vars = params.bind(tape, Some(flat)).map_err(into_autodiff)?;
            Ok(taped_loss(tape, &vars, &batch, &x).map_err(into_autodiff)?.0)
        },
        &theta,
        step,
        tol,
    )?;
    Ok(report)
}

fn into_autodiff(e: PolicyError) -> AutodiffError {
    match e {
        PolicyError::Autodiff(a) | PolicyError::Transmit(TransmitError::Autodiff(a)) => a,
        other => AutodiffError::Shape(other.to_string()),
    }
}

/// Feasible decision for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub power: PowerVector,
    pub phase: PhaseVector,
    pub beamformers: BeamformerSet,
    pub rates: Vec<f64>,
}

impl Inference {
    pub fn weighted_sum_rate(&self, weights: &[f64]) -> f64 {
        self.rates.iter().zip(weights).map(|(r, w)| r * w).sum()
    }
}

/// Inference-mode forward pass, output normalisation and beamformer
/// recovery for one instance.
pub fn infer(params: &MLPParams, ch: &ChannelSet) -> Result<Inference> {
    if ch.dims() != params.dims {
        return Err(PolicyError::Dimension(format!("network for {:?}, channels {:?}", params.dims, ch.dims())));
    }
    let raw = forward_infer(params, &vectorize_input(ch), 1);
    let (power, phase) = normalize_outputs(&raw.raw_p, &raw.raw_phi, ch.p_max)?;
    let g = transmit::build_g(ch, &phase)?;
    let dirs = transmit::mmse_directions(&g, &ch.sigma2)?;
    let beamformers = transmit::recover_beamformers(&power, &dirs)?;
    let rates = (0..ch.dims().k).map(|k| transmit::rate(ch, k, &beamformers, &phase)).collect::<std::result::Result<_, _>>()?;
    Ok(Inference { power, phase, beamformers, rates })
}
