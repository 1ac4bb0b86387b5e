use super::AutodiffError;

/// Dense row-major array of `f64` with an explicit shape.
///
/// Complex arrays use a trailing axis of length 2 holding `(re, im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::Shape(format!("shape {shape:?} needs {n} entries, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::Domain("non-finite tensor entry".into()));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

/// Numpy-style result shape for two right-aligned shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index into an array of shape
/// `input` that broadcasts to it.
pub(crate) fn broadcast_offsets(out: &[usize], input: &[usize]) -> Vec<usize> {
    let total: usize = out.iter().product();
    if out == input {
        return (0..total).collect();
    }
    let nd = out.len();
    let pad = nd - input.len();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for i in (0..input.len()).rev() {
        strides[pad + i] = if input[i] == 1 { 0 } else { s };
        s *= input[i];
    }
    let mut idx = vec![0usize; nd];
    let mut offs = Vec::with_capacity(total);
    let mut cur = 0usize;
    for _ in 0..total {
        offs.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offs
}
