//! Record-then-reverse automatic differentiation.
//!
//! Every operation appends a node holding its output value and the indices of
//! its inputs. Inputs always precede outputs, so `backward` walks the node list
//! once in exact reverse order and the resulting gradients are deterministic.

use std::collections::HashMap;

use crate::autodiff::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dims2, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberate backward-pass corruptions used to prove the gradient checker
/// catches real bugs.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Drops the `-Σ g·y` term of the softmax Jacobian-vector product.
    SoftmaxBackward,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sum(Var),
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ZeroRows {
        x: Var,
        keep: Vec<bool>,
    },
    CrossEntropy {
        x: Var,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `gelu(x) = 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::c(SQRT_2_OVER_PI) * (x + T::c(GELU_CUBIC) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::c(SQRT_2_OVER_PI);
    let c = T::c(GELU_CUBIC);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = T::c(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::c(3.0) * c * x * x)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was
    /// on a differentiable path.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input tensor. It participates in differentiation iff its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Places a parameter on the tape, once per tape. Frozen parameters
    /// become constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let p = store.get(id);
        let v = if p.frozen {
            self.push(p.value.clone(), Op::Leaf, false)
        } else {
            self.push(p.value.clone(), Op::Param, true)
        };
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul_t", self.value(a))?;
        let (n, k2) = dims2("matmul_t", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulT(a, b), needs))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Adds a length-`c` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c {
            return Err(Error::shape("add_row", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += *b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(x, bias), needs))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.map(x, |v| v * c);
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, c), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, gelu);
        let needs = self.needs(x);
        self.push(out, Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.tanh());
        let needs = self.needs(x);
        self.push(out, Op::Tanh(x), needs)
    }

    /// Sum of all entries as a `[1 × 1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(x), needs)
    }

    /// Row-wise softmax over the last axis. `mask[j] == false` excludes
    /// column `j` from every row: its output is exactly zero.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        if mask.len() != c {
            return Err(Error::shape("softmax_masked", t.shape(), &[mask.len()]));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::EmptyAttention {
                context: "softmax input",
            });
        }
        let mut out = vec![T::zero(); t.len()];
        for (row, dst) in t.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, mask, dst);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Softmax { x }, needs))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        if d == 0 {
            return Err(Error::shape("layer_norm", t.shape(), &[1]));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != d || b.len() != d {
            return Err(Error::shape("layer_norm", t.shape(), g.shape()));
        }
        let rows = t.rows();
        let mut xhat = vec![T::zero(); t.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); t.len()];
        let inv_d = T::one() / T::c(d as f64);
        for r in 0..rows {
            let row = t.row_slice(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + T::c(eps)).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g.data()[j] + b.data()[j];
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Gathers rows of a `[V × d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2("embedding", self.value(table))?;
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
            out.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], out);
        let needs = self.needs(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transposed()?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Transpose(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::shape("concat_rows", &[], &[]))?;
        let (_, c) = dims2("concat_rows", self.value(first))?;
        let mut data = Vec::new();
        let mut rows = 0;
        let mut needs = false;
        for &p in parts {
            let (r, pc) = dims2("concat_rows", self.value(p))?;
            if pc != c {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
            needs |= self.needs(p);
        }
        let out = Tensor::from_parts(vec![rows, c], data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::shape("concat_cols", &[], &[]))?;
        let (r, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut needs = false;
        for &p in parts {
            let (pr, pc) = dims2("concat_cols", self.value(p))?;
            if pr != r {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
            needs |= self.needs(p);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![r, total], data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_rows", self.value(x))?;
        if start + len > r {
            return Err(Error::shape("slice_rows", self.shape(x), &[start + len, c]));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![len, c], data),
            Op::SliceRows { x, start },
            needs,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_cols", self.value(x))?;
        if start + len > c {
            return Err(Error::shape("slice_cols", self.shape(x), &[r, start + len]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![r, len], data),
            Op::SliceCols { x, start },
            needs,
        ))
    }

    /// Zeroes every row `i` with `keep[i] == false`.
    pub fn zero_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if keep.len() != t.rows() {
            return Err(Error::shape("zero_rows", t.shape(), &[keep.len()]));
        }
        let c = t.cols();
        let mut data = t.data().to_vec();
        for (row, k) in data.chunks_mut(c.max(1)).zip(keep) {
            if !k {
                row.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let needs = self.needs(x);
        Ok(self.push(out, Op::ZeroRows { x, keep: keep.to_vec() }, needs))
    }

    /// `-log softmax(x)[target]` for a single row of scores.
    pub fn cross_entropy(&mut self, x: Var, target: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows() != 1 || target >= t.cols() {
            return Err(Error::shape("cross_entropy", t.shape(), &[1, target + 1]));
        }
        let mut probs = vec![T::zero(); t.cols()];
        let mask = vec![true; t.cols()];
        softmax_row(t.data(), &mask, &mut probs);
        let max = t.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + t.data().iter().map(|v| (*v - max).exp()).sum::<T>().ln();
        let loss = lse - t.data()[target];
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![loss]),
            Op::CrossEntropy { x, target, probs },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss. Gradients for non-frozen parameters
    /// reached by the tape are accumulated into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes.is_empty() {
            return Err(Error::NonScalarLoss { shape: vec![] });
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (id, v) in &self.params {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            match &grads[v.0] {
                Some(g) => store.accumulate_grad(*id, g),
                None => {
                    let zeros = vec![T::zero(); self.nodes[v.0].value.len()];
                    store.accumulate_grad(*id, &zeros)
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    self.acc(grads, *a, |da| gemm_nt(g, bv, da, m, n, k));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, |db| gemm_tn(av, g, db, k, m, n));
                }
            }
            Op::MatMulT(a, b) => {
                // C[m×n] = A[m×k]·B[n×k]ᵀ
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).rows();
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    self.acc(grads, *a, |da| gemm_nn(g, bv, da, m, n, k));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, |db| gemm_tn(g, av, db, n, m, k));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |da| axpy(da, g, T::one()));
                self.acc(grads, *b, |db| axpy(db, g, T::one()));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |da| axpy(da, g, T::one()));
                self.acc(grads, *b, |db| axpy(db, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += *gi * *bi;
                    }
                });
                self.acc(grads, *b, |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += *gi * *ai;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, |dx| axpy(dx, g, T::one()));
                let c = self.value(*x).cols().max(1);
                self.acc(grads, *bias, |db| {
                    for row in g.chunks(c) {
                        axpy(db, row, T::one());
                    }
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, |dx| axpy(dx, g, *c)),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > T::zero() {
                            *d += *gi;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += *gi * gelu_grad(*xi);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                self.acc(grads, *x, |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(yv) {
                        *d += *gi * (T::one() - *yi * *yi);
                    }
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Softmax { x } => {
                let y = node.value.data();
                let c = node.value.cols().max(1);
                let faulty = self.fault == Some(Fault::SoftmaxBackward);
                self.acc(grads, *x, |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = if faulty {
                            T::zero()
                        } else {
                            gr.iter().zip(yr).map(|(a, b)| *a * *b).sum()
                        };
                        for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += *yi * (*gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |dg| {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, gi), xi) in dg.iter_mut().zip(gr).zip(xr) {
                            *o += *gi * *xi;
                        }
                    }
                });
                self.acc(grads, *bias, |db| {
                    for gr in g.chunks(d) {
                        axpy(db, gr, T::one());
                    }
                });
                let inv_d = T::one() / T::c(d as f64);
                self.acc(grads, *x, |dx| {
                    for (r, ((dr, gr), xr)) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xr[j];
                        }
                        mean_dxh *= inv_d;
                        mean_dxh_xh *= inv_d;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            dr[j] += inv_std[r] * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                self.acc(grads, *table, |dt| {
                    for (row, &id) in g.chunks(d.max(1)).zip(ids) {
                        axpy(&mut dt[id * d..(id + 1) * d], row, T::one());
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = dims(&node.value);
                self.acc(grads, *x, |dx| {
                    // node is [r×c], input is [c×r]
                    for i in 0..r {
                        for j in 0..c {
                            dx[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |dx| axpy(dx, g, T::one())),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, |dp| axpy(dp, &g[offset..offset + n], T::one()));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = dims(&node.value);
                let mut col = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.acc(grads, *p, |dp| {
                        for i in 0..r {
                            axpy(
                                &mut dp[i * w..(i + 1) * w],
                                &g[i * total + col..i * total + col + w],
                                T::one(),
                            );
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.cols();
                self.acc(grads, *x, |dx| {
                    axpy(&mut dx[start * c..start * c + g.len()], g, T::one())
                });
            }
            Op::SliceCols { x, start } => {
                let (r, w) = dims(&node.value);
                let c = self.value(*x).cols();
                self.acc(grads, *x, |dx| {
                    for i in 0..r {
                        axpy(
                            &mut dx[i * c + start..i * c + start + w],
                            &g[i * w..(i + 1) * w],
                            T::one(),
                        );
                    }
                });
            }
            Op::ZeroRows { x, keep } => {
                let c = node.value.cols().max(1);
                self.acc(grads, *x, |dx| {
                    for ((dr, gr), k) in dx.chunks_mut(c).zip(g.chunks(c)).zip(keep) {
                        if *k {
                            axpy(dr, gr, T::one());
                        }
                    }
                });
            }
            Op::CrossEntropy { x, target, probs } => {
                self.acc(grads, *x, |dx| {
                    for (j, (d, p)) in dx.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { T::one() } else { T::zero() };
                        *d += g[0] * (*p - onehot);
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(buf);
    }
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * *s;
    }
}

/// Max-subtracted softmax over the unmasked entries of one row.
pub(crate) fn softmax_row<T: Scalar>(row: &[T], mask: &[bool], out: &mut [T]) {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for ((o, v), m) in out.iter_mut().zip(row).zip(mask) {
        *o = if *m { (*v - max).exp() } else { T::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
