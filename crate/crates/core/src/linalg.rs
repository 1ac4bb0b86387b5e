//! Dense complex vectors and matrices.
//!
//! Entries are [`Complex64`], which is `#[repr(C)]` over `(re, im)`, so a
//! `[Complex64]` slice is the same memory as an interleaved `[f64]` slice.
//! The autodiff engine relies on that to share the kernels below without
//! copying.

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("empty matrix or vector")]
    Empty,
    #[error("non-finite entry")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// View an interleaved real/imag buffer as complex numbers.
pub fn as_complex(data: &[f64]) -> &[C64] {
    bytemuck::cast_slice(data)
}

pub fn as_complex_mut(data: &mut [f64]) -> &mut [C64] {
    bytemuck::cast_slice_mut(data)
}

pub fn as_real(data: &[C64]) -> &[f64] {
    bytemuck::cast_slice(data)
}

/// `out = a * b` for row-major `a` (m x k) and `b` (k x n).
pub fn matmul_into(a: &[C64], b: &[C64], m: usize, k: usize, n: usize, out: &mut [C64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (z, &bv) in row.iter_mut().zip(brow) {
                *z += aip * bv;
            }
        }
    }
}

/// Conjugate transpose of a row-major `m x n` block into `n x m`.
pub fn hermitian_into(a: &[C64], m: usize, n: usize, out: &mut [C64]) {
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j].conj();
        }
    }
}

/// In-place Cholesky factorisation `M = L L^H` of a Hermitian positive
/// definite `k x k` matrix. Only the lower triangle of the input is read; on
/// return the lower triangle holds `L` and the strict upper triangle is zeroed.
pub fn cholesky_in_place(m: &mut [C64], k: usize) -> Result<()> {
    for j in 0..k {
        let mut d = m[j * k + j].re;
        for p in 0..j {
            d -= m[j * k + p].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        m[j * k + j] = C64::new(ljj, 0.0);
        for i in (j + 1)..k {
            let mut s = m[i * k + j];
            for p in 0..j {
                s -= m[i * k + p] * m[j * k + p].conj();
            }
            m[i * k + j] = s / ljj;
        }
        for i in 0..j {
            m[i * k + j] = C64::new(0.0, 0.0);
        }
    }
    Ok(())
}

/// Solve `L L^H X = B` given the factor from [`cholesky_in_place`]; `b` is
/// `k x cols` row-major and is overwritten with `X`.
pub fn cholesky_solve_in_place(l: &[C64], k: usize, b: &mut [C64], cols: usize) {
    // forward: L y = b
    for i in 0..k {
        for p in 0..i {
            let lip = l[i * k + p];
            for c in 0..cols {
                let t = lip * b[p * cols + c];
                b[i * cols + c] -= t;
            }
        }
        let inv = 1.0 / l[i * k + i].re;
        for c in 0..cols {
            b[i * cols + c] *= inv;
        }
    }
    // backward: L^H x = y
    for i in (0..k).rev() {
        for p in (i + 1)..k {
            let lpi = l[p * k + i].conj();
            for c in 0..cols {
                let t = lpi * b[p * cols + c];
                b[i * cols + c] -= t;
            }
        }
        let inv = 1.0 / l[i * k + i].re;
        for c in 0..cols {
            b[i * cols + c] *= inv;
        }
    }
}

/// Solve `M X = B` for Hermitian positive definite `M` (`k x k`), writing
/// `X` into `out` (`k x cols`).
pub fn solve_hpd_into(m: &[C64], k: usize, b: &[C64], cols: usize, out: &mut [C64]) -> Result<()> {
    let mut l = m.to_vec();
    cholesky_in_place(&mut l, k)?;
    out.copy_from_slice(b);
    cholesky_solve_in_place(&l, k, out, cols);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVec {
    data: Vec<C64>,
}

impl CVec {
    pub fn new(data: Vec<C64>) -> Result<Self> {
        if data.is_empty() {
            return Err(LinalgError::Empty);
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self { data: vec![C64::new(0.0, 0.0); len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn l2norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn conj(&self) -> Self {
        Self { data: self.data.iter().map(|z| z.conj()).collect() }
    }

    /// Plain bilinear product `sum_i a_i b_i` (no conjugation).
    pub fn dot(&self, other: &CVec) -> Result<C64> {
        if self.len() != other.len() {
            return Err(LinalgError::DimensionMismatch(format!("dot of lengths {} and {}", self.len(), other.len())));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `1 x n` row matrix.
    pub fn as_row(&self) -> CMat {
        CMat { rows: 1, cols: self.len(), data: self.data.clone() }
    }

    pub fn as_col(&self) -> CMat {
        CMat { rows: self.len(), cols: 1, data: self.data.clone() }
    }
}

impl std::ops::Index<usize> for CVec {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!("{} entries for a {}x{} matrix", data.len(), rows, cols)));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> CVec {
        CVec { data: self.data[i * self.cols..(i + 1) * self.cols].to_vec() }
    }

    pub fn col(&self, j: usize) -> CVec {
        CVec { data: (0..self.rows).map(|i| self.get(i, j)).collect() }
    }

    pub fn matmul(&self, other: &CMat) -> Result<CMat> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        matmul_into(&self.data, &other.data, self.rows, self.cols, other.cols, &mut out.data);
        Ok(out)
    }

    pub fn matvec(&self, v: &CVec) -> Result<CVec> {
        let m = self.matmul(&v.as_col())?;
        Ok(CVec { data: m.data })
    }

    pub fn hermitian(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        hermitian_into(&self.data, self.rows, self.cols, &mut out.data);
        out
    }

    /// `A A^H`.
    pub fn gram(&self) -> CMat {
        let h = self.hermitian();
        let mut out = CMat::zeros(self.rows, self.rows);
        matmul_into(&self.data, &h.data, self.rows, self.cols, self.rows, &mut out.data);
        out
    }

    pub fn add(&self, other: &CMat) -> Result<CMat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &CMat) -> Result<CMat> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &CMat, f: impl Fn(C64, C64) -> C64) -> Result<CMat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        Ok(CMat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Solve `self * X = b` for Hermitian positive definite `self`.
    pub fn solve_hpd(&self, b: &CMat) -> Result<CMat> {
        if self.rows != self.cols || b.rows != self.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "solve with {}x{} matrix and {}x{} rhs",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = CMat::zeros(b.rows, b.cols);
        solve_hpd_into(&self.data, self.rows, &b.data, b.cols, &mut out.data)?;
        Ok(out)
    }
}

pub fn matmul(a: &CMat, b: &CMat) -> Result<CMat> {
    a.matmul(b)
}

pub fn hermitian(a: &CMat) -> CMat {
    a.hermitian()
}

pub fn gram(a: &CMat) -> CMat {
    a.gram()
}

pub fn l2norm(v: &CVec) -> f64 {
    v.l2norm()
}

pub fn solve_hpd(m: &CMat, b: &CMat) -> Result<CMat> {
    m.solve_hpd(b)
}
