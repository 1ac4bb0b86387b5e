//! Alternating-optimisation baseline over powers and RIS phases, plus an
//! exhaustive grid search used as a reference optimum on tiny instances.
//!
//! Each outer iteration runs a block of projected gradient steps on the
//! powers (Euclidean projection onto the scaled simplex) followed by a block
//! of gradient steps on the phases, with every step accepted only if the
//! weighted sum rate does not decrease. The objective trace is therefore
//! non-decreasing, and a longer run with the same seed extends a shorter one.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::transmit::{self, weighted_sum_rate_var, ChannelBatch, ChannelSet, PhaseVector, PowerVector, TransmitError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: f64, limit: f64 },
    #[error(transparent)]
    Transmit(#[from] TransmitError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

pub const GRID_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AOConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Gradient steps per block in each outer iteration.
    pub inner_steps: usize,
    /// Initial power step as a fraction of the budget along the unit gradient.
    pub power_step: f64,
    /// Initial phase step in radians along the unit gradient.
    pub phase_step: f64,
    /// Step shrink factor on a rejected trial.
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AOConfig {
    fn default() -> Self {
        Self { iterations: 25, inner_steps: 10, power_step: 0.5, phase_step: 1.0, backtrack: 0.5, max_backtracks: 30, restarts: 3, seed: 0 }
    }
}

impl AOConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations >= 1
            && self.inner_steps >= 1
            && self.restarts >= 1
            && self.power_step > 0.0
            && self.phase_step > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(BaselineError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AOResult {
    pub power: PowerVector,
    pub phase: PhaseVector,
    pub objective: f64,
    /// Objective of the reported restart: the initial value, then the value
    /// after each outer iteration.
    pub trace: Vec<f64>,
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = z}`.
pub fn project_simplex(v: &[f64], z: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - z) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    // spread the rounding residue over the support so the sum is exact to ulps
    let support = x.iter().filter(|&&xi| xi > 0.0).count().max(1) as f64;
    let residue = (z - x.iter().sum::<f64>()) / support;
    for xi in x.iter_mut().filter(|xi| **xi > 0.0) {
        *xi += residue;
    }
    x
}

struct Problem<'a> {
    ch: &'a ChannelSet,
    batch: ChannelBatch,
}

impl Problem<'_> {
    fn objective(&self, p: &[f64], phi: &[f64]) -> Result<f64> {
        let power = PowerVector::new(p.to_vec(), self.ch.p_max)?;
        Ok(transmit::weighted_sum_rate(self.ch, &power, &PhaseVector::wrapped(phi))?)
    }

    fn gradients(&self, p: &[f64], phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.ch.dims();
        let tape = Tape::new();
        let pv = tape.leaf(Tensor::new(vec![1, d.k], p.to_vec()).map_err(TransmitError::from)?);
        let fv = tape.leaf(Tensor::new(vec![1, d.n], phi.to_vec()).map_err(TransmitError::from)?);
        let wsr = weighted_sum_rate_var(&tape, &self.batch, pv, fv)?;
        let grads = wsr.sum().backward().map_err(TransmitError::from)?;
        Ok((grads.wrt(&pv).into_data(), grads.wrt(&fv).into_data()))
    }
}

fn unit(g: &[f64]) -> Option<Vec<f64>> {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| g.iter().map(|v| v / n).collect())
}

/// Tries steps `t, t b, t b^2, ...` along `dir` and keeps the first trial
/// whose objective is not lower. Returns the accepted step size.
fn line_search(
    current: &mut Vec<f64>,
    value: &mut f64,
    dir: &[f64],
    step: f64,
    config: &AOConfig,
    mut trial: impl FnMut(&[f64], f64) -> Result<(Vec<f64>, f64)>,
) -> Result<Option<f64>> {
    let mut t = step;
    for _ in 0..=config.max_backtracks {
        let (cand, f) = trial(dir, t)?;
        if f >= *value {
            *current = cand;
            *value = f;
            return Ok(Some(t));
        }
        t *= config.backtrack;
    }
    Ok(None)
}

fn run(problem: &Problem<'_>, mut phi: Vec<f64>, config: &AOConfig) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let ch = problem.ch;
    let k = ch.dims().k;
    let mut p = PowerVector::uniform(k, ch.p_max).as_slice().to_vec();
    let mut value = problem.objective(&p, &phi)?;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(value);
    let (mut tp, mut tf) = (config.power_step, config.phase_step);
    for _ in 0..config.iterations {
        for _ in 0..config.inner_steps {
            if k == 1 {
                break;
            }
            let Some(dir) = unit(&problem.gradients(&p, &phi)?.0) else { break };
            let (base, fixed_phi) = (p.clone(), phi.clone());
            let accepted = line_search(&mut p, &mut value, &dir, tp, config, |d, t| {
                let raw: Vec<f64> = base.iter().zip(d).map(|(pi, di)| pi + t * ch.p_max * di).collect();
                let cand = project_simplex(&raw, ch.p_max);
                let f = problem.objective(&cand, &fixed_phi)?;
                Ok((cand, f))
            })?;
            match accepted {
                Some(t) => tp = (2.0 * t).min(config.power_step),
                None => break,
            }
        }
        for _ in 0..config.inner_steps {
            let Some(dir) = unit(&problem.gradients(&p, &phi)?.1) else { break };
            let (base, fixed_p) = (phi.clone(), p.clone());
            let accepted = line_search(&mut phi, &mut value, &dir, tf, config, |d, t| {
                let raw: Vec<f64> = base.iter().zip(d).map(|(fi, di)| fi + t * di).collect();
                let cand = PhaseVector::wrapped(&raw).as_slice().to_vec();
                let f = problem.objective(&fixed_p, &cand)?;
                Ok((cand, f))
            })?;
            match accepted {
                Some(t) => tf = (2.0 * t).min(config.phase_step),
                None => break,
            }
        }
        trace.push(value);
    }
    Ok((p, phi, trace))
}

/// Best of `restarts` monotone alternating runs, each starting from uniform
/// powers and seeded random phases.
pub fn ao_optimize(ch: &ChannelSet, config: &AOConfig) -> Result<AOResult> {
    config.validate()?;
    let problem = Problem { ch, batch: ChannelBatch::new(&[ch])? };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.restarts).map(|_| (0..ch.dims().n).map(|_| rng.random_range(0.0..TAU)).collect()).collect();
    let mut best: Option<AOResult> = None;
    for phi0 in starts {
        let (p, phi, trace) = run(&problem, phi0, config)?;
        let objective = *trace.last().expect("trace holds the initial value");
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(AOResult { power: PowerVector::new(p, ch.p_max)?, phase: PhaseVector::wrapped(&phi), objective, trace });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub power: PowerVector,
    pub phase: PhaseVector,
    pub objective: f64,
}

/// Number of points in the grid searched by [`grid_oracle`].
pub fn grid_size(k: usize, n: usize, resolution: usize) -> f64 {
    let phases = (resolution as f64).powi(n as i32);
    // compositions of `resolution` into `k` non-negative parts
    let mut powers = 1.0;
    for i in 1..k {
        powers *= (resolution + i) as f64 / i as f64;
    }
    phases * powers
}

/// Exhaustive search over `phi_n in {2 pi i / R}` and powers
/// `p = p_max c / R` for every composition `c` of `R` into `K` parts.
pub fn grid_oracle(ch: &ChannelSet, resolution: usize) -> Result<GridResult> {
    let d = ch.dims();
    if resolution == 0 {
        return Err(BaselineError::InvalidConfig("grid resolution must be positive".into()));
    }
    let points = grid_size(d.k, d.n, resolution);
    if points > GRID_LIMIT {
        return Err(BaselineError::GridTooLarge { points, limit: GRID_LIMIT });
    }
    let mut powers = Vec::new();
    compositions(resolution, d.k, &mut Vec::new(), &mut powers);
    let mut best: Option<GridResult> = None;
    let mut idx = vec![0usize; d.n];
    loop {
        let phase = PhaseVector::new(idx.iter().map(|&i| TAU * i as f64 / resolution as f64).collect())?;
        let g = transmit::build_g(ch, &phase)?;
        let dirs = transmit::mmse_directions(&g, &ch.sigma2)?;
        let gains: Vec<Vec<f64>> = (0..d.k)
            .map(|k| dirs.iter().map(|w| g.row(k).dot(w).map(|z| z.norm_sqr())).collect::<std::result::Result<_, _>>())
            .collect::<std::result::Result<_, _>>()
            .map_err(TransmitError::from)?;
        for c in &powers {
            let p: Vec<f64> = c.iter().map(|&ci| ch.p_max * ci as f64 / resolution as f64).collect();
            let value: f64 = (0..d.k)
                .map(|k| {
                    let interference: f64 = (0..d.k).filter(|&i| i != k).map(|i| p[i] * gains[k][i]).sum();
                    ch.user_weight[k] * (1.0 + p[k] * gains[k][k] / (interference + ch.sigma2[k])).log2()
                })
                .sum();
            if best.as_ref().is_none_or(|b| value > b.objective) {
                best = Some(GridResult { power: PowerVector::new(p, ch.p_max)?, phase: phase.clone(), objective: value });
            }
        }
        // odometer increment over phase indices
        let mut pos = 0;
        while pos < d.n {
            idx[pos] += 1;
            if idx[pos] < resolution {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == d.n {
            break;
        }
    }
    Ok(best.expect("grid is non-empty"))
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}
