//! Downlink model for one activated RIS: Rayleigh channel draws scaled by
//! effective pathloss, the cascade channel `f_k = g_k^H + h_k^H Phi H`,
//! MMSE beam directions, and the achievable rates.
//!
//! Two rate routes are provided. [`rate`] evaluates the SINR of explicit
//! beamformers `w_k = sqrt(p_k) w̄_k`; [`rates_tilde`] evaluates the same
//! quantity from powers and unit directions,
//! `log2(1 + p_k |f_k w̄_k|^2 / (sum_{i != k} p_i |f_k w̄_i|^2 + sigma_k^2))`.

mod batch;

pub use batch::{weighted_sum_rate_var, ChannelBatch};

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::linalg::{CMat, CVec, LinalgError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransmitError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid power vector: {0}")]
    InvalidPower(String),
    #[error("invalid phase vector: {0}")]
    InvalidPhase(String),
    #[error("invalid channel parameter: {0}")]
    InvalidParameter(String),
    #[error("beam direction for user {0} is undefined (zero cascade channel)")]
    DegenerateDirection(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, TransmitError>;

/// Sizes of one instance: users, RIS elements, transmit antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
    pub n: usize,
    pub n_t: usize,
}

impl Dims {
    pub fn new(k: usize, n: usize, n_t: usize) -> Self {
        Self { k, n, n_t }
    }

    /// Length of the real input vector: `2 (N N_T + K (N + N_T))`.
    pub fn input_len(&self) -> usize {
        2 * (self.n * self.n_t + self.k * (self.n + self.n_t))
    }
}

/// Channels of one optimisation instance with the selected RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// Transmitter to RIS, `N x N_T`.
    pub h_tr: CMat,
    /// RIS to user `k`, length `N`.
    pub h_ru: Vec<CVec>,
    /// Transmitter to user `k`, length `N_T`.
    pub g: Vec<CVec>,
    pub sigma2: Vec<f64>,
    pub user_weight: Vec<f64>,
    pub p_max: f64,
}

impl ChannelSet {
    pub fn new(h_tr: CMat, h_ru: Vec<CVec>, g: Vec<CVec>, sigma2: Vec<f64>, user_weight: Vec<f64>, p_max: f64) -> Result<Self> {
        let k = h_ru.len();
        let (n, n_t) = (h_tr.rows(), h_tr.cols());
        if k == 0 {
            return Err(TransmitError::Dimension("no users".into()));
        }
        if g.len() != k || sigma2.len() != k || user_weight.len() != k {
            return Err(TransmitError::Dimension(format!(
                "{k} RIS-user channels but {} direct channels, {} noise powers, {} weights",
                g.len(),
                sigma2.len(),
                user_weight.len()
            )));
        }
        if h_ru.iter().any(|h| h.len() != n) || g.iter().any(|v| v.len() != n_t) {
            return Err(TransmitError::Dimension(format!("user channels must have lengths N={n}, N_T={n_t}")));
        }
        if sigma2.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(TransmitError::InvalidParameter("noise powers must be positive".into()));
        }
        if user_weight.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || !(user_weight.iter().sum::<f64>() > 0.0) {
            return Err(TransmitError::InvalidParameter("weights must be non-negative with positive sum".into()));
        }
        if !(p_max > 0.0) || !p_max.is_finite() {
            return Err(TransmitError::InvalidParameter(format!("p_max {p_max}")));
        }
        Ok(Self { h_tr, h_ru, g, sigma2, user_weight, p_max })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.h_ru.len(), self.h_tr.rows(), self.h_tr.cols())
    }
}

/// RIS phase shifts in `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(Vec<f64>);

impl PhaseVector {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        if let Some(bad) = phi.iter().find(|&&v| !(0.0..TAU).contains(&v)) {
            return Err(TransmitError::InvalidPhase(format!("{bad} outside [0, 2pi)")));
        }
        Ok(Self(phi))
    }

    /// Wraps arbitrary finite angles into `[0, 2 pi)`.
    pub fn wrapped(phi: &[f64]) -> Self {
        Self(phi.iter().map(|&v| wrap_phase(v)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn wrap_phase(v: f64) -> f64 {
    let w = v.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Tolerance on `sum p = p_max`.
pub const POWER_SUM_TOL: f64 = 1e-9;

/// Non-negative per-user powers spending the whole budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(p: Vec<f64>, p_max: f64) -> Result<Self> {
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(TransmitError::InvalidPower("negative or non-finite power".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - p_max).abs() > POWER_SUM_TOL {
            return Err(TransmitError::InvalidPower(format!("powers sum to {s}, budget {p_max}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(k: usize, p_max: f64) -> Self {
        Self(vec![p_max / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w: Vec<CVec>,
}

impl BeamformerSet {
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(CVec::norm_sqr).sum()
    }
}

/// Statistical link model: entries are CN(0, rho0 * e^-eta) for effective
/// pathloss `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub rho0: f64,
    pub eta: f64,
    pub sigma2: f64,
    pub p_max: f64,
}

impl ChannelModel {
    pub fn variance(&self, pathloss: f64) -> f64 {
        self.rho0 * pathloss.powf(-self.eta)
    }
}

/// Effective pathlosses of the links that feed one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPathlosses {
    pub tr: f64,
    pub ru: Vec<f64>,
    pub tu: Vec<f64>,
}

impl LinkPathlosses {
    /// Pathlosses of `scene` with RIS `l` activated.
    pub fn from_scene(scene: &crate::geometry::Scene, l: usize) -> std::result::Result<Self, crate::geometry::GeometryError> {
        let k = scene.users().len();
        Ok(Self {
            tr: scene.effective_pathloss_tr(l)?,
            ru: (0..k).map(|i| scene.effective_pathloss_ru(l, i)).collect::<std::result::Result<_, _>>()?,
            tu: (0..k).map(|i| scene.effective_pathloss_tu(i)).collect::<std::result::Result<_, _>>()?,
        })
    }

    /// Mean over links (one transmitter-RIS, K RIS-user, K direct) of `e^-eta`.
    pub fn mean_gain(&self, eta: f64) -> f64 {
        let all: Vec<f64> = std::iter::once(self.tr).chain(self.ru.iter().copied()).chain(self.tu.iter().copied()).collect();
        all.iter().map(|e| e.powf(-eta)).sum::<f64>() / all.len() as f64
    }
}

/// `rho0` that makes the mean link power over noise equal `target_db` across
/// the given pathloss sets.
pub fn calibrate_rho0(samples: &[LinkPathlosses], eta: f64, sigma2: f64, target_db: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(TransmitError::InvalidParameter("calibration needs at least one scene".into()));
    }
    let mean = samples.iter().map(|s| s.mean_gain(eta)).sum::<f64>() / samples.len() as f64;
    Ok(10f64.powf(target_db / 10.0) * sigma2 / mean)
}

fn cscg<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let nd = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    C64::new(nd.sample(rng), nd.sample(rng))
}

/// Draws one [`ChannelSet`] with i.i.d. circularly-symmetric Gaussian
/// entries whose variance follows each link's effective pathloss.
pub fn sample_channels<R: Rng + ?Sized>(links: &LinkPathlosses, dims: Dims, model: &ChannelModel, rng: &mut R) -> Result<ChannelSet> {
    let all = std::iter::once(&links.tr).chain(&links.ru).chain(&links.tu);
    if all.clone().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(TransmitError::InvalidParameter("pathlosses must be positive".into()));
    }
    if links.ru.len() != dims.k || links.tu.len() != dims.k {
        return Err(TransmitError::Dimension(format!("{} users in pathlosses, K={}", links.ru.len(), dims.k)));
    }
    if !(model.rho0 > 0.0) || !model.eta.is_finite() {
        return Err(TransmitError::InvalidParameter("rho0 must be positive".into()));
    }
    let v_tr = model.variance(links.tr);
    let h_tr = CMat::from_fn(dims.n, dims.n_t, |_, _| cscg(v_tr, rng));
    let h_ru = links
        .ru
        .iter()
        .map(|&e| {
            let v = model.variance(e);
            CVec::new((0..dims.n).map(|_| cscg(v, rng)).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let g = links
        .tu
        .iter()
        .map(|&e| {
            let v = model.variance(e);
            CVec::new((0..dims.n_t).map(|_| cscg(v, rng)).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ChannelSet::new(h_tr, h_ru, g, vec![model.sigma2; dims.k], vec![1.0; dims.k], model.p_max)
}

/// `f_k = g_k^H + h_k^H Phi H`, a length-`N_T` row.
pub fn cascade_row(ch: &ChannelSet, k: usize, phi: &PhaseVector) -> Result<CVec> {
    let d = ch.dims();
    if k >= d.k {
        return Err(TransmitError::Dimension(format!("user {k} of {}", d.k)));
    }
    if phi.len() != d.n {
        return Err(TransmitError::Dimension(format!("{} phases for N={}", phi.len(), d.n)));
    }
    let mut row: Vec<C64> = ch.g[k].as_slice().iter().map(|z| z.conj()).collect();
    for (n, &p) in phi.as_slice().iter().enumerate() {
        let coef = ch.h_ru[k][n].conj() * C64::from_polar(1.0, p);
        for (t, r) in row.iter_mut().enumerate() {
            *r += coef * ch.h_tr.get(n, t);
        }
    }
    Ok(CVec::new(row)?)
}

/// Stacks the cascade rows into the `K x N_T` matrix `G`.
pub fn build_g(ch: &ChannelSet, phi: &PhaseVector) -> Result<CMat> {
    let d = ch.dims();
    let mut data = Vec::with_capacity(d.k * d.n_t);
    for k in 0..d.k {
        data.extend_from_slice(cascade_row(ch, k, phi)?.as_slice());
    }
    Ok(CMat::from_vec(d.k, d.n_t, data)?)
}

/// Unit-norm columns of `V = G^H (G G^H + diag(sigma2))^-1`.
pub fn mmse_directions(g: &CMat, sigma2: &[f64]) -> Result<Vec<CVec>> {
    let k = g.rows();
    if sigma2.len() != k {
        return Err(TransmitError::Dimension(format!("{} noise powers for K={k}", sigma2.len())));
    }
    let mut m = g.gram();
    for (i, &s) in sigma2.iter().enumerate() {
        m.set(i, i, m.get(i, i) + s);
    }
    // V = (M^-1 G)^H since M is Hermitian
    let y = m.solve_hpd(g)?;
    (0..k)
        .map(|i| {
            let v = y.row(i).conj();
            let nrm = v.l2norm();
            if !(nrm > 0.0) {
                return Err(TransmitError::DegenerateDirection(i));
            }
            Ok(v.scale(C64::new(1.0 / nrm, 0.0)))
        })
        .collect()
}

/// `w_k = sqrt(p_k) w̄_k`.
pub fn recover_beamformers(p: &PowerVector, directions: &[CVec]) -> Result<BeamformerSet> {
    if p.len() != directions.len() {
        return Err(TransmitError::Dimension(format!("{} powers, {} directions", p.len(), directions.len())));
    }
    if p.as_slice().iter().any(|&v| v < 0.0) {
        return Err(TransmitError::InvalidPower("negative power".into()));
    }
    Ok(BeamformerSet { w: p.as_slice().iter().zip(directions).map(|(&pk, d)| d.scale(C64::new(pk.sqrt(), 0.0))).collect() })
}

/// SINR rate of user `k` under explicit beamformers.
pub fn rate(ch: &ChannelSet, k: usize, bf: &BeamformerSet, phi: &PhaseVector) -> Result<f64> {
    let f = cascade_row(ch, k, phi)?;
    if bf.w.len() != ch.dims().k {
        return Err(TransmitError::Dimension(format!("{} beamformers for K={}", bf.w.len(), ch.dims().k)));
    }
    let gains = bf.w.iter().map(|w| f.dot(w).map(|z| z.norm_sqr())).collect::<std::result::Result<Vec<_>, _>>()?;
    let interference: f64 = gains.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, g)| g).sum();
    Ok((1.0 + gains[k] / (interference + ch.sigma2[k])).log2())
}

/// Per-user rates from powers and MMSE directions at `phi`.
pub fn rates_tilde(ch: &ChannelSet, p: &PowerVector, phi: &PhaseVector) -> Result<Vec<f64>> {
    let d = ch.dims();
    if p.len() != d.k {
        return Err(TransmitError::Dimension(format!("{} powers for K={}", p.len(), d.k)));
    }
    let g = build_g(ch, phi)?;
    let dirs = mmse_directions(&g, &ch.sigma2)?;
    let mut out = Vec::with_capacity(d.k);
    for k in 0..d.k {
        let f = g.row(k);
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (i, dir) in dirs.iter().enumerate() {
            let gain = p.as_slice()[i] * f.dot(dir)?.norm_sqr();
            if i == k {
                signal = gain;
            } else {
                interference += gain;
            }
        }
        out.push((1.0 + signal / (interference + ch.sigma2[k])).log2());
    }
    Ok(out)
}

/// `sum_k omega_k R̃_k`.
pub fn weighted_sum_rate(ch: &ChannelSet, p: &PowerVector, phi: &PhaseVector) -> Result<f64> {
    let r = rates_tilde(ch, p, phi)?;
    Ok(r.iter().zip(&ch.user_weight).map(|(r, w)| r * w).sum())
}

#[cfg(test)]
mod tests;
