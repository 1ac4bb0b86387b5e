use std::cell::RefCell;
use std::f64::consts::LN_2;

use super::tensor::{broadcast_offsets, broadcast_shape, Tensor};
use super::AutodiffError;
use crate::linalg::{self, as_complex, as_complex_mut, C64};

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Reciprocal(usize),
    Log2(usize),
    Sqrt(usize),
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    Matmul(usize, usize),
    Linear { x: usize, w: usize, b: usize },
    SumAxis { a: usize, axis: usize },
    SumAll(usize),
    Reshape(usize),
    Slice { a: usize, start: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    ComplexMul(usize, usize),
    CMatmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Hermitian { a: usize, m: usize, n: usize },
    MagSq(usize),
    Solve { m: usize, b: usize, k: usize, cols: usize },
    UnitPhasor(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of tensor operations.
///
/// Node ids are assigned in creation order, which is a topological order
/// of the graph; [`Tape::backward`] walks them in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Batch statistics produced by [`Var::batchnorm_train`].
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/B) variance.
    pub var: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if nodes[loss.id].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(id);
            let Some(g) = rest[0].as_ref() else { continue };
            backprop_node(&nodes, id, g, before)?;
        }
        Ok(Gradients { grads, shapes: nodes[..=loss.id].iter().map(|n| n.value.shape().to_vec()).collect() })
    }
}

/// Gradients of a scalar with respect to every node recorded before it.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: &Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.clone()) {
            Some(g) => Tensor::from_parts(self.shapes[v.id].clone(), g),
            None => Tensor::zeros(&v.shape()),
        }
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: bounds of every strided access are checked by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let node = &nodes[id];
    let y = node.value.data();
    let val = |i: usize| nodes[i].value.data();
    let len = |i: usize| nodes[i].value.len();
    let want = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let out = node.value.shape();
            if want(*a) {
                let offs = broadcast_offsets(out, nodes[*a].value.shape());
                let ga = acc(&mut grads[*a], len(*a));
                for (o, &ia) in offs.iter().enumerate() {
                    ga[ia] += g[o];
                }
            }
            if want(*b) {
                let offs = broadcast_offsets(out, nodes[*b].value.shape());
                let gb = acc(&mut grads[*b], len(*b));
                for (o, &ib) in offs.iter().enumerate() {
                    gb[ib] += sign * g[o];
                }
            }
        }
        Op::Mul(a, b) => {
            let out = node.value.shape();
            let oa = broadcast_offsets(out, nodes[*a].value.shape());
            let ob = broadcast_offsets(out, nodes[*b].value.shape());
            let (va, vb) = (val(*a), val(*b));
            if want(*a) {
                let ga = acc(&mut grads[*a], len(*a));
                for o in 0..g.len() {
                    ga[oa[o]] += g[o] * vb[ob[o]];
                }
            }
            if want(*b) {
                let gb = acc(&mut grads[*b], len(*b));
                for o in 0..g.len() {
                    gb[ob[o]] += g[o] * va[oa[o]];
                }
            }
        }
        Op::Scale(a, c) => {
            let ga = acc(&mut grads[*a], len(*a));
            for (d, &gi) in ga.iter_mut().zip(g) {
                *d += c * gi;
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            let ga = acc(&mut grads[*a], len(*a));
            for (d, &gi) in ga.iter_mut().zip(g) {
                *d += gi;
            }
        }
        Op::Reciprocal(a) => {
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                ga[i] -= g[i] * y[i] * y[i];
            }
        }
        Op::Log2(a) => {
            let x = val(*a);
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                ga[i] += g[i] / (x[i] * LN_2);
            }
        }
        Op::Sqrt(a) => {
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                ga[i] += g[i] / (2.0 * y[i]);
            }
        }
        Op::Relu(a) => {
            let x = val(*a);
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                if x[i] > 0.0 {
                    ga[i] += g[i];
                }
            }
        }
        Op::Sigmoid(a) => {
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                ga[i] += g[i] * y[i] * (1.0 - y[i]);
            }
        }
        Op::Softmax(a) => {
            let n = *node.value.shape().last().unwrap();
            let ga = acc(&mut grads[*a], len(*a));
            for r in 0..g.len() / n {
                let ys = &y[r * n..(r + 1) * n];
                let gs = &g[r * n..(r + 1) * n];
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    ga[r * n + j] += ys[j] * (gs[j] - dot);
                }
            }
        }
        Op::Matmul(a, b) => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if want(*a) {
                // dA = dC B^T
                let ga = acc(&mut grads[*a], m * k);
                gemm(m, n, k, g, (n, 1), val(*b), (1, n), ga, 1.0);
            }
            if want(*b) {
                // dB = A^T dC
                let gb = acc(&mut grads[*b], k * n);
                gemm(k, m, n, val(*a), (1, k), g, (n, 1), gb, 1.0);
            }
        }
        Op::Linear { x, w, b } => {
            let sx = nodes[*x].value.shape();
            let (bsz, fin) = (sx[0], sx[1]);
            let fout = nodes[*w].value.shape()[0];
            if want(*x) {
                let gx = acc(&mut grads[*x], bsz * fin);
                gemm(bsz, fout, fin, g, (fout, 1), val(*w), (fin, 1), gx, 1.0);
            }
            if want(*w) {
                let gw = acc(&mut grads[*w], fout * fin);
                gemm(fout, bsz, fin, g, (1, fout), val(*x), (fin, 1), gw, 1.0);
            }
            if want(*b) {
                let gb = acc(&mut grads[*b], fout);
                for r in 0..bsz {
                    for j in 0..fout {
                        gb[j] += g[r * fout + j];
                    }
                }
            }
        }
        Op::SumAxis { a, axis } => {
            let sa = nodes[*a].value.shape();
            let outer: usize = sa[..*axis].iter().product();
            let mid = sa[*axis];
            let inner: usize = sa[*axis + 1..].iter().product();
            let ga = acc(&mut grads[*a], len(*a));
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner {
                        ga[(o * mid + m) * inner + i] += g[o * inner + i];
                    }
                }
            }
        }
        Op::SumAll(a) => {
            let ga = acc(&mut grads[*a], len(*a));
            for d in ga.iter_mut() {
                *d += g[0];
            }
        }
        Op::Slice { a, start } => {
            let ga = acc(&mut grads[*a], len(*a));
            for (i, &gi) in g.iter().enumerate() {
                ga[start + i] += gi;
            }
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
            let sx = nodes[*x].value.shape();
            let (bsz, f) = (sx[0], sx[1]);
            let gam = val(*gamma);
            let mut sum_g = vec![0.0; f];
            let mut sum_gx = vec![0.0; f];
            for r in 0..bsz {
                for j in 0..f {
                    sum_g[j] += g[r * f + j];
                    sum_gx[j] += g[r * f + j] * xhat[r * f + j];
                }
            }
            if want(*gamma) {
                let gg = acc(&mut grads[*gamma], f);
                for j in 0..f {
                    gg[j] += sum_gx[j];
                }
            }
            if want(*beta) {
                let gb = acc(&mut grads[*beta], f);
                for j in 0..f {
                    gb[j] += sum_g[j];
                }
            }
            if want(*x) {
                let gx = acc(&mut grads[*x], bsz * f);
                let nb = bsz as f64;
                for r in 0..bsz {
                    for j in 0..f {
                        let i = r * f + j;
                        gx[i] += gam[j] * inv_std[j] / nb * (nb * g[i] - sum_g[j] - xhat[i] * sum_gx[j]);
                    }
                }
            }
        }
        Op::ComplexMul(a, b) => {
            let out = &node.value.shape()[..node.value.shape().len() - 1];
            let sa = nodes[*a].value.shape();
            let sb = nodes[*b].value.shape();
            let oa = broadcast_offsets(out, &sa[..sa.len() - 1]);
            let ob = broadcast_offsets(out, &sb[..sb.len() - 1]);
            let (za, zb) = (as_complex(val(*a)), as_complex(val(*b)));
            let gz = as_complex(g);
            if want(*a) {
                let ga = as_complex_mut(acc(&mut grads[*a], len(*a)));
                for o in 0..gz.len() {
                    ga[oa[o]] += gz[o] * zb[ob[o]].conj();
                }
            }
            if want(*b) {
                let gb = as_complex_mut(acc(&mut grads[*b], len(*b)));
                for o in 0..gz.len() {
                    gb[ob[o]] += gz[o] * za[oa[o]].conj();
                }
            }
        }
        Op::CMatmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let batch = g.len() / (2 * m * n);
            let (za, zb, gz) = (as_complex(val(*a)), as_complex(val(*b)), as_complex(g));
            let mut tmp_h = Vec::new();
            let mut tmp = Vec::new();
            if want(*a) {
                let ga = as_complex_mut(acc(&mut grads[*a], len(*a)));
                tmp_h.resize(k * n, C64::new(0.0, 0.0));
                tmp.resize(m * k, C64::new(0.0, 0.0));
                for s in 0..batch {
                    // dA = dC B^H
                    linalg::hermitian_into(&zb[s * k * n..(s + 1) * k * n], k, n, &mut tmp_h);
                    linalg::matmul_into(&gz[s * m * n..(s + 1) * m * n], &tmp_h, m, n, k, &mut tmp);
                    for (d, t) in ga[s * m * k..(s + 1) * m * k].iter_mut().zip(&tmp) {
                        *d += t;
                    }
                }
            }
            if want(*b) {
                let gb = as_complex_mut(acc(&mut grads[*b], len(*b)));
                tmp_h.resize(m * k, C64::new(0.0, 0.0));
                tmp.resize(k * n, C64::new(0.0, 0.0));
                for s in 0..batch {
                    // dB = A^H dC
                    linalg::hermitian_into(&za[s * m * k..(s + 1) * m * k], m, k, &mut tmp_h[..m * k]);
                    linalg::matmul_into(&tmp_h[..m * k], &gz[s * m * n..(s + 1) * m * n], k, m, n, &mut tmp[..k * n]);
                    for (d, t) in gb[s * k * n..(s + 1) * k * n].iter_mut().zip(&tmp[..k * n]) {
                        *d += t;
                    }
                }
            }
        }
        Op::Hermitian { a, m, n } => {
            let (m, n) = (*m, *n);
            let gz = as_complex(g);
            let ga = as_complex_mut(acc(&mut grads[*a], len(*a)));
            let batch = gz.len() / (m * n);
            for s in 0..batch {
                for i in 0..m {
                    for j in 0..n {
                        ga[s * m * n + i * n + j] += gz[s * m * n + j * m + i].conj();
                    }
                }
            }
        }
        Op::MagSq(a) => {
            let x = val(*a);
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..g.len() {
                ga[2 * i] += 2.0 * x[2 * i] * g[i];
                ga[2 * i + 1] += 2.0 * x[2 * i + 1] * g[i];
            }
        }
        Op::Solve { m, b, k, cols } => {
            let (k, cols) = (*k, *cols);
            let batch = g.len() / (2 * k * cols);
            let zm = as_complex(val(*m));
            let zx = as_complex(y);
            let gz = as_complex(g);
            let mut gbv = vec![C64::new(0.0, 0.0); batch * k * cols];
            for s in 0..batch {
                let (msl, bsl) = (&zm[s * k * k..(s + 1) * k * k], &gz[s * k * cols..(s + 1) * k * cols]);
                linalg::solve_hpd_into(msl, k, bsl, cols, &mut gbv[s * k * cols..(s + 1) * k * cols]).map_err(AutodiffError::Linalg)?;
            }
            if want(*b) {
                let gb = as_complex_mut(acc(&mut grads[*b], len(*b)));
                for (d, t) in gb.iter_mut().zip(&gbv) {
                    *d += t;
                }
            }
            if want(*m) {
                // dM = -dB X^H
                let gm = as_complex_mut(acc(&mut grads[*m], len(*m)));
                for s in 0..batch {
                    for i in 0..k {
                        for j in 0..k {
                            let mut t = C64::new(0.0, 0.0);
                            for c in 0..cols {
                                t += gbv[s * k * cols + i * cols + c] * zx[s * k * cols + j * cols + c].conj();
                            }
                            gm[s * k * k + i * k + j] -= t;
                        }
                    }
                }
            }
        }
        Op::UnitPhasor(a) => {
            let x = val(*a);
            let ga = acc(&mut grads[*a], len(*a));
            for i in 0..x.len() {
                ga[i] += -x[i].sin() * g[2 * i] + x[i].cos() * g[2 * i + 1];
            }
        }
    }
    Ok(())
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::Shape(msg)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(*self)
    }

    fn emit(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'t> {
        let needs = self.tape.needs(parents);
        self.tape.push(value, op, needs)
    }

    fn map_unary(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
    }

    fn binary_broadcast(&self, other: &Var<'t>, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let out = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| shape_err(format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let oa = broadcast_offsets(&out, a.shape());
            let ob = broadcast_offsets(&out, b.shape());
            oa.iter().zip(&ob).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
        };
        Ok(Tensor::from_parts(out, data))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.binary_broadcast(other, |a, b| a + b)?;
        Ok(self.emit(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.binary_broadcast(other, |a, b| a - b)?;
        Ok(self.emit(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.binary_broadcast(other, |a, b| a * b)?;
        Ok(self.emit(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.map_unary(|x| c * x);
        self.emit(v, Op::Scale(self.id, c), &[self.id])
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `self + c` elementwise.
    pub fn offset(&self, c: f64) -> Var<'t> {
        let v = self.map_unary(|x| x + c);
        self.emit(v, Op::Offset(self.id), &[self.id])
    }

    pub fn reciprocal(&self) -> Result<Var<'t>> {
        if self.value_any(|x| x == 0.0) {
            return Err(AutodiffError::Domain("reciprocal of zero".into()));
        }
        let v = self.map_unary(|x| 1.0 / x);
        Ok(self.emit(v, Op::Reciprocal(self.id), &[self.id]))
    }

    pub fn log2(&self) -> Result<Var<'t>> {
        if self.value_any(|x| !(x > 0.0)) {
            return Err(AutodiffError::Domain("log2 of non-positive value".into()));
        }
        let v = self.map_unary(f64::log2);
        Ok(self.emit(v, Op::Log2(self.id), &[self.id]))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if self.value_any(|x| !(x > 0.0)) {
            return Err(AutodiffError::Domain("sqrt of non-positive value".into()));
        }
        let v = self.map_unary(f64::sqrt);
        Ok(self.emit(v, Op::Sqrt(self.id), &[self.id]))
    }

    fn value_any(&self, pred: impl Fn(f64) -> bool) -> bool {
        self.tape.nodes.borrow()[self.id].value.data().iter().any(|&x| pred(x))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.map_unary(|x| if x > 0.0 { x } else { 0.0 });
        self.emit(v, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.map_unary(sigmoid);
        self.emit(v, Op::Sigmoid(self.id), &[self.id])
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| shape_err("softmax of a scalar".into()))?;
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        Ok(self.emit(Tensor::from_parts(x.shape().to_vec(), data), Op::Softmax(self.id), &[self.id]))
    }

    /// 2-D real matrix product.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.tape.nodes.borrow();
            gemm(m, k, n, nodes[self.id].value.data(), (k, 1), nodes[other.id].value.data(), (n, 1), &mut out, 0.0);
        }
        Ok(self.emit(Tensor::from_parts(vec![m, n], out), Op::Matmul(self.id, other.id), &[self.id, other.id]))
    }

    /// `self W^T + b` for `self` of shape `[batch, in]`, `W` of shape
    /// `[out, in]`, `b` of shape `[out]`.
    pub fn linear(&self, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        let (sx, sw, sb) = (self.shape(), w.shape(), b.shape());
        if sx.len() != 2 || sw.len() != 2 || sw[1] != sx[1] || sb != [sw[0]] {
            return Err(shape_err(format!("linear x{sx:?} W{sw:?} b{sb:?}")));
        }
        let (bsz, fin, fout) = (sx[0], sx[1], sw[0]);
        let mut out = vec![0.0; bsz * fout];
        {
            let nodes = self.tape.nodes.borrow();
            let bias = nodes[b.id].value.data();
            for r in 0..bsz {
                out[r * fout..(r + 1) * fout].copy_from_slice(bias);
            }
            gemm(bsz, fin, fout, nodes[self.id].value.data(), (fin, 1), nodes[w.id].value.data(), (1, fin), &mut out, 1.0);
        }
        Ok(self.emit(Tensor::from_parts(vec![bsz, fout], out), Op::Linear { x: self.id, w: w.id, b: b.id }, &[self.id, w.id, b.id]))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if axis >= s.len() {
            return Err(shape_err(format!("axis {axis} out of range for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let mid = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    out[o * inner + i] += x.data()[(o * mid + m) * inner + i];
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok(self.emit(Tensor::from_parts(shape, out), Op::SumAxis { a: self.id, axis }, &[self.id]))
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.tape.nodes.borrow()[self.id].value.data().iter().sum();
        self.emit(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.tape.nodes.borrow()[self.id].value.len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.len() {
            return Err(shape_err(format!("reshape {:?} to {shape:?}", x.shape())));
        }
        Ok(self.emit(Tensor::from_parts(shape.to_vec(), x.into_data()), Op::Reshape(self.id), &[self.id]))
    }

    /// Contiguous flat range `start..start + prod(shape)`, reshaped.
    pub fn slice(&self, start: usize, shape: &[usize]) -> Result<Var<'t>> {
        let n: usize = shape.iter().product();
        let nodes = self.tape.nodes.borrow();
        let x = nodes[self.id].value.data();
        if start + n > x.len() {
            return Err(shape_err(format!("slice {start}..{} of {} entries", start + n, x.len())));
        }
        let t = Tensor::from_parts(shape.to_vec(), x[start..start + n].to_vec());
        drop(nodes);
        Ok(self.emit(t, Op::Slice { a: self.id, start }, &[self.id]))
    }

    /// Batch normalisation with batch statistics over axis 0 of a
    /// `[batch, features]` input.
    pub fn batchnorm_train(&self, gamma: &Var<'t>, beta: &Var<'t>, eps: f64) -> Result<(Var<'t>, BatchStats)> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
            return Err(shape_err(format!("batchnorm x{s:?} gamma{:?} beta{:?}", gamma.shape(), beta.shape())));
        }
        let (bsz, f) = (s[0], s[1]);
        let (gam, bet) = (gamma.value(), beta.value());
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for r in 0..bsz {
            for j in 0..f {
                mean[j] += x.data()[r * f + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= bsz as f64);
        for r in 0..bsz {
            for j in 0..f {
                let d = x.data()[r * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= bsz as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; bsz * f];
        let mut out = vec![0.0; bsz * f];
        for r in 0..bsz {
            for j in 0..f {
                let i = r * f + j;
                xhat[i] = (x.data()[i] - mean[j]) * inv_std[j];
                out[i] = gam.data()[j] * xhat[i] + bet.data()[j];
            }
        }
        let v = self.emit(
            Tensor::from_parts(vec![bsz, f], out),
            Op::BatchNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std },
            &[self.id, gamma.id, beta.id],
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Elementwise complex product of `[..., 2]` arrays, broadcasting over
    /// the leading axes.
    pub fn complex_mul_pair(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.last() != Some(&2) || sb.last() != Some(&2) {
            return Err(shape_err(format!("complex_mul_pair needs trailing 2: {sa:?}, {sb:?}")));
        }
        let (ca, cb) = (&sa[..sa.len() - 1], &sb[..sb.len() - 1]);
        let out = broadcast_shape(ca, cb).ok_or_else(|| shape_err(format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let oa = broadcast_offsets(&out, ca);
        let ob = broadcast_offsets(&out, cb);
        let (za, zb) = (as_complex(a.data()), as_complex(b.data()));
        let mut data = vec![0.0; 2 * oa.len()];
        let zo = as_complex_mut(&mut data);
        for o in 0..oa.len() {
            zo[o] = za[oa[o]] * zb[ob[o]];
        }
        let mut shape = out;
        shape.push(2);
        Ok(self.emit(Tensor::from_parts(shape, data), Op::ComplexMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Batched complex matrix product: `[..., m, k, 2] x [..., k, n, 2]`
    /// with identical leading axes.
    pub fn complex_matmul_pair(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        let bad = || shape_err(format!("complex matmul {sa:?} x {sb:?}"));
        if sa.len() < 3 || sb.len() != sa.len() || sa.last() != Some(&2) || sb.last() != Some(&2) {
            return Err(bad());
        }
        let r = sa.len();
        let (m, k, n) = (sa[r - 3], sa[r - 2], sb[r - 2]);
        if sb[r - 3] != k || sa[..r - 3] != sb[..r - 3] {
            return Err(bad());
        }
        let batch: usize = sa[..r - 3].iter().product();
        let (za, zb) = (as_complex(a.data()), as_complex(b.data()));
        let mut data = vec![0.0; 2 * batch * m * n];
        let zo = as_complex_mut(&mut data);
        for s in 0..batch {
            linalg::matmul_into(
                &za[s * m * k..(s + 1) * m * k],
                &zb[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
                &mut zo[s * m * n..(s + 1) * m * n],
            );
        }
        let mut shape = sa[..r - 3].to_vec();
        shape.extend([m, n, 2]);
        Ok(self.emit(Tensor::from_parts(shape, data), Op::CMatmul { a: self.id, b: other.id, m, k, n }, &[self.id, other.id]))
    }

    /// Conjugate transpose of the last two matrix axes of `[..., m, n, 2]`.
    pub fn hermitian_pair(&self) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        if s.len() < 3 || s.last() != Some(&2) {
            return Err(shape_err(format!("hermitian of {s:?}")));
        }
        let r = s.len();
        let (m, n) = (s[r - 3], s[r - 2]);
        let batch: usize = s[..r - 3].iter().product();
        let za = as_complex(a.data());
        let mut data = vec![0.0; a.len()];
        let zo = as_complex_mut(&mut data);
        for b in 0..batch {
            linalg::hermitian_into(&za[b * m * n..(b + 1) * m * n], m, n, &mut zo[b * m * n..(b + 1) * m * n]);
        }
        let mut shape = s[..r - 3].to_vec();
        shape.extend([n, m, 2]);
        Ok(self.emit(Tensor::from_parts(shape, data), Op::Hermitian { a: self.id, m, n }, &[self.id]))
    }

    /// `|z|^2` of a `[..., 2]` array, dropping the trailing axis.
    pub fn magnitude_squared_pair(&self) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        if s.last() != Some(&2) {
            return Err(shape_err(format!("magnitude_squared_pair of {s:?}")));
        }
        let data = a.data().chunks(2).map(|z| z[0] * z[0] + z[1] * z[1]).collect();
        Ok(self.emit(Tensor::from_parts(s[..s.len() - 1].to_vec(), data), Op::MagSq(self.id), &[self.id]))
    }

    /// Batched Hermitian positive definite solve `self X = rhs`, shapes
    /// `[..., k, k, 2]` and `[..., k, c, 2]`.
    pub fn solve_hpd_pair(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        let (m, b) = (self.value(), rhs.value());
        let (sm, sb) = (m.shape(), b.shape());
        let bad = || shape_err(format!("solve {sm:?} with rhs {sb:?}"));
        if sm.len() < 3 || sb.len() != sm.len() || sm.last() != Some(&2) || sb.last() != Some(&2) {
            return Err(bad());
        }
        let r = sm.len();
        let (k, cols) = (sm[r - 3], sb[r - 2]);
        if sm[r - 2] != k || sb[r - 3] != k || sm[..r - 3] != sb[..r - 3] {
            return Err(bad());
        }
        let batch: usize = sm[..r - 3].iter().product();
        let (zm, zb) = (as_complex(m.data()), as_complex(b.data()));
        let mut data = vec![0.0; b.len()];
        let zo = as_complex_mut(&mut data);
        for s in 0..batch {
            linalg::solve_hpd_into(
                &zm[s * k * k..(s + 1) * k * k],
                k,
                &zb[s * k * cols..(s + 1) * k * cols],
                cols,
                &mut zo[s * k * cols..(s + 1) * k * cols],
            )
            .map_err(AutodiffError::Linalg)?;
        }
        Ok(self.emit(Tensor::from_parts(sb.to_vec(), data), Op::Solve { m: self.id, b: rhs.id, k, cols }, &[self.id, rhs.id]))
    }

    /// `e^{j x}` as a `[..., 2]` array.
    pub fn unit_phasor(&self) -> Var<'t> {
        let x = self.value();
        let data = x.data().iter().flat_map(|&p| [p.cos(), p.sin()]).collect();
        let mut shape = x.shape().to_vec();
        shape.push(2);
        self.emit(Tensor::from_parts(shape, data), Op::UnitPhasor(self.id), &[self.id])
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
