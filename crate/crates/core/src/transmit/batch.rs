use crate::autodiff::{Tape, Tensor, Var};

use super::{ChannelSet, Dims, Result, TransmitError};

/// Channels of `M` instances with equal dimensions, packed as real arrays
/// with a trailing `(re, im)` axis for use on a [`Tape`].
#[derive(Debug, Clone)]
pub struct ChannelBatch {
    dims: Dims,
    len: usize,
    /// `[M, N, N_T, 2]`
    h_tr: Tensor,
    /// `h_k^H` stacked, `[M, K, N, 2]`
    h_ru_conj: Tensor,
    /// `g_k^H` stacked, `[M, K, N_T, 2]`
    g_conj: Tensor,
    /// `diag(sigma2)`, `[M, K, K, 2]`
    noise_diag: Tensor,
    /// `[M, K]`
    sigma2: Tensor,
    /// `[M, K]`
    weights: Tensor,
    /// `[M, 1]`
    p_max: Tensor,
}

impl ChannelBatch {
    pub fn new(sets: &[&ChannelSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| TransmitError::Dimension("empty batch".into()))?;
        let dims = first.dims();
        let Dims { k, n, n_t } = dims;
        let m = sets.len();
        let mut h_tr = Vec::with_capacity(m * n * n_t * 2);
        let mut h_ru_conj = Vec::with_capacity(m * k * n * 2);
        let mut g_conj = Vec::with_capacity(m * k * n_t * 2);
        let mut noise_diag = vec![0.0; m * k * k * 2];
        let mut sigma2 = Vec::with_capacity(m * k);
        let mut weights = Vec::with_capacity(m * k);
        let mut p_max = Vec::with_capacity(m);
        for (s, ch) in sets.iter().enumerate() {
            if ch.dims() != dims {
                return Err(TransmitError::Dimension(format!("batch mixes {:?} and {:?}", dims, ch.dims())));
            }
            h_tr.extend(ch.h_tr.as_slice().iter().flat_map(|z| [z.re, z.im]));
            for h in &ch.h_ru {
                h_ru_conj.extend(h.as_slice().iter().flat_map(|z| [z.re, -z.im]));
            }
            for g in &ch.g {
                g_conj.extend(g.as_slice().iter().flat_map(|z| [z.re, -z.im]));
            }
            for (i, &v) in ch.sigma2.iter().enumerate() {
                noise_diag[2 * (s * k * k + i * k + i)] = v;
            }
            sigma2.extend_from_slice(&ch.sigma2);
            weights.extend_from_slice(&ch.user_weight);
            p_max.push(ch.p_max);
        }
        Ok(Self {
            dims,
            len: m,
            h_tr: Tensor::new(vec![m, n, n_t, 2], h_tr)?,
            h_ru_conj: Tensor::new(vec![m, k, n, 2], h_ru_conj)?,
            g_conj: Tensor::new(vec![m, k, n_t, 2], g_conj)?,
            noise_diag: Tensor::new(vec![m, k, k, 2], noise_diag)?,
            sigma2: Tensor::new(vec![m, k], sigma2)?,
            weights: Tensor::new(vec![m, k], weights)?,
            p_max: Tensor::new(vec![m, 1], p_max)?,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-instance power budgets, `[M, 1]`.
    pub fn p_max(&self) -> &Tensor {
        &self.p_max
    }
}

fn masks(k: usize) -> (Tensor, Tensor) {
    let eye: Vec<f64> = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
    let off = eye.iter().map(|v| 1.0 - v).collect();
    (Tensor::from_parts(vec![1, k, k], eye), Tensor::from_parts(vec![1, k, k], off))
}

/// Weighted sum rate of every instance in `batch`, shape `[M]`, as a
/// differentiable function of powers `p` `[M, K]` and phases `phi` `[M, N]`.
///
/// Phases may be any real value; beam directions are the MMSE directions
/// recomputed at `phi`.
pub fn weighted_sum_rate_var<'t>(tape: &'t Tape, batch: &ChannelBatch, p: Var<'t>, phi: Var<'t>) -> Result<Var<'t>> {
    let Dims { k, n, n_t } = batch.dims;
    let m = batch.len;
    if p.shape() != [m, k] || phi.shape() != [m, n] {
        return Err(TransmitError::Dimension(format!(
            "powers {:?} and phases {:?} for batch of {m} with K={k}, N={n}",
            p.shape(),
            phi.shape()
        )));
    }
    let h_tr = tape.constant(batch.h_tr.clone());
    let h_ru_conj = tape.constant(batch.h_ru_conj.clone());
    let g_conj = tape.constant(batch.g_conj.clone());
    let noise_diag = tape.constant(batch.noise_diag.clone());
    let sigma2 = tape.constant(batch.sigma2.clone());
    let weights = tape.constant(batch.weights.clone());
    let (eye, off) = masks(k);
    let (eye, off) = (tape.constant(eye), tape.constant(off));

    // G = g^H + h^H diag(e^{j phi}) H
    let phasor = phi.unit_phasor().reshape(&[m, n, 1, 2])?;
    let scaled_h = phasor.complex_mul_pair(&h_tr)?;
    let g = g_conj.add(&h_ru_conj.complex_matmul_pair(&scaled_h)?)?;

    // V = G^H (G G^H + diag sigma2)^-1 = ((G G^H + diag sigma2)^-1 G)^H
    let gram = g.complex_matmul_pair(&g.hermitian_pair()?)?.add(&noise_diag)?;
    let v = gram.solve_hpd_pair(&g)?.hermitian_pair()?;
    debug_assert_eq!(v.shape(), [m, n_t, k, 2]);

    // gain[k, i] = |f_k v_i|^2 / ||v_i||^2
    let coupling = g.complex_matmul_pair(&v)?.magnitude_squared_pair()?;
    let col_norm = v.magnitude_squared_pair()?.sum_axis(1)?.reshape(&[m, 1, k])?;
    let gain = coupling.mul(&col_norm.reciprocal()?)?;
    let received = gain.mul(&p.reshape(&[m, 1, k])?)?;
    let signal = received.mul(&eye)?.sum_axis(2)?;
    let interference = received.mul(&off)?.sum_axis(2)?.add(&sigma2)?;
    let rate = signal.add(&interference)?.log2()?.sub(&interference.log2()?)?;
    Ok(rate.mul(&weights)?.sum_axis(1)?)
}
