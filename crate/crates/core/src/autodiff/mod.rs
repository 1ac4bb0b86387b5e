//! Reverse-mode automatic differentiation over real tensors.
//!
//! Complex quantities are carried as real arrays with a trailing `(re, im)`
//! axis and every complex op is differentiated in that real representation.
//! For a real loss `L`, the stored gradient of a complex entry `z` is
//! `dL/dRe(z) + j dL/dIm(z)`, so a linear map `y = A x` pulls back as
//! `x_bar = A^H y_bar`.
//!
//! The tape is rebuilt for every evaluation (define-by-run):
//!
//! ```
//! use ris_core::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.wrt(&x).data(), &[2.0, 4.0, 6.0]);
//! ```

mod tape;
mod tensor;

pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{gemm, sigmoid, softmax_in_place};

use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Denominator floor used by [`grad_check`]: entries whose gradient is tiny
/// compared with the largest one are compared on that scale instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Checks the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences with the given `step`.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, floor)` with
/// `floor = GRAD_CHECK_FLOOR * max(1, max_i |a_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AutodiffError>,
{
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = f(&tape, leaf)?;
        tape.backward(out)?.wrt(&leaf).into_data()
    };
    let eval = |data: Vec<f64>| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let leaf = tape.constant(Tensor::new(x.shape().to_vec(), data)?);
        let out = f(&tape, leaf)?;
        if out.value().len() != 1 {
            return Err(AutodiffError::NonScalarLoss(out.shape()));
        }
        Ok(out.item())
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += step;
        minus[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = GRAD_CHECK_FLOOR * scale;
    let (mut max_rel_error, mut worst_index) = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if e > max_rel_error {
            max_rel_error = e;
            worst_index = i;
        }
    }
    Ok(GradCheckReport { analytic, numeric, max_rel_error, worst_index, passed: max_rel_error < tol })
}
