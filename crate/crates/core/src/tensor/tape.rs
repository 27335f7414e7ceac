use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Self::Sigmoid => sigmoid(x),
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Self::Sigmoid => y * (T::one() - y),
            Self::Tanh => T::one() - y * y,
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Act(Activation, Var),
    Pointwise(Var, fn(T, T) -> T),
    SoftmaxRows(Var),
    Concat(Var, Var),
    MeanRows(Var),
    Scale(Var, T),
    Dropout(Var, Vec<T>),
    Sum(Var),
    SliceRows(Var, usize),
    PairwiseSum(Var, Var, Var),
    StackRows(Vec<Var>),
    Column(Var, usize),
    LogClamped(Var, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Linear record of a forward computation, replayed in reverse by
/// [`Tape::backward`]. A tape supports exactly one backward pass.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only accumulated for leaves created
    /// with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index]
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self.id, index }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).needs_grad)
    }

    /// Matrix product. A 1-D left operand is treated as a row vector and
    /// yields a 1-D result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa.len() > 2 || sa.is_empty() {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k) = self.value(a).as_matrix();
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(Error::dim("matmul", sa, sb));
        }
        let shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMulNt(a, b),
            needs,
        ))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        Ok(Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Adds a bias vector of length `n` to every row of `a: [m×n]` (or to a
    /// 1-D `a` of length `n`). The only broadcast the tape supports.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = ta.as_matrix();
        let (br, bn) = tb.as_matrix();
        if br != 1 || bn != n || ta.shape().is_empty() {
            return Err(Error::dim("add_row_bias", ta.shape(), tb.shape()));
        }
        let b = tb.data();
        let data = ta
            .data()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let needs = self.any_grad(&[a, bias]);
        Ok(self.push(out, Op::AddRowBias(a, bias), needs))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if !tx.is_finite() {
            return Err(Error::Numeric(format!("non-finite input to {kind:?}")));
        }
        let out = tx.map(|v| kind.apply(v));
        let needs = self.any_grad(&[x]);
        Ok(self.push(out, Op::Act(kind, x), needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    /// Elementwise map with a caller-supplied derivative `d(x, y) = dy/dx`.
    pub fn pointwise(&mut self, x: Var, f: fn(T) -> T, derivative: fn(T, T) -> T) -> Var {
        let out = self.value(x).map(f);
        let needs = self.any_grad(&[x]);
        self.push(out, Op::Pointwise(x, derivative), needs)
    }

    /// Row-wise softmax with max subtraction. 1-D input is a single row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (_, n) = tx.as_matrix();
        if n == 0 {
            return Err(Error::EmptyReduction("softmax_rows"));
        }
        let mut data = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            let mut total = T::zero();
            for &v in row {
                let e = (v - max).exp();
                total += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v = *v / total;
            }
        }
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let needs = self.any_grad(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), needs))
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat", sa, sb));
        }
        let (p, q) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = if p + q == 0 { 0 } else { sa[..sa.len() - 1].iter().product() };
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Concat(a, b), needs))
    }

    /// Mean over the leading axis of `[N×d]`, producing `[d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::dim("mean_rows", tx.shape(), &[]));
        }
        let (rows, n) = (tx.shape()[0], tx.shape()[1]);
        if rows == 0 {
            return Err(Error::EmptyReduction("mean_rows"));
        }
        // Each column is summed in sorted order so the result depends only on
        // the multiset of rows, not their order.
        let scale = T::one() / T::of(rows as f64);
        let src = tx.data();
        let mut column = Vec::with_capacity(rows);
        let data = (0..n)
            .map(|j| {
                column.clear();
                column.extend((0..rows).map(|i| src[i * n + j]));
                column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                column.iter().copied().sum::<T>() * scale
            })
            .collect();
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor { shape: vec![n], data }, Op::MeanRows(x), needs))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let needs = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, factor), needs)
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)` so the
    /// inference path is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let tx = self.value(x);
        let mask: Vec<T> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        let needs = self.any_grad(&[x]);
        Ok(self.push(out, Op::Dropout(x, mask), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let needs = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, _) = tx.as_matrix();
        if tx.shape().len() != 2 || start + len > rows {
            return Err(Error::dim("slice_rows", tx.shape(), &[start, len]));
        }
        let out = tx.rows(start, len);
        let needs = self.any_grad(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), needs))
    }

    /// Row `i` of a matrix as a 1-D tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || i >= tx.shape()[0] {
            return Err(Error::dim("row", tx.shape(), &[i]));
        }
        let n = tx.shape()[1];
        let out = Tensor {
            shape: vec![n],
            data: tx.data()[i * n..(i + 1) * n].to_vec(),
        };
        let needs = self.any_grad(&[x]);
        Ok(self.push(out, Op::SliceRows(x, i), needs))
    }

    /// `out[i][j] = a[i] + b[j] + bias` for column vectors `a: [N×1]`,
    /// `b: [M×1]` and a single-element `bias`.
    pub fn pairwise_sum(&mut self, a: Var, b: Var, bias: Var) -> Result<Var> {
        let (ta, tb, tc) = (self.value(a), self.value(b), self.value(bias));
        if ta.shape().len() != 2 || ta.shape()[1] != 1 || tb.shape().len() != 2 || tb.shape()[1] != 1 {
            return Err(Error::dim("pairwise_sum", ta.shape(), tb.shape()));
        }
        if tc.len() != 1 {
            return Err(Error::dim("pairwise_sum", tc.shape(), &[1]));
        }
        let c = tc.item();
        let (n, m) = (ta.len(), tb.len());
        let mut data = Vec::with_capacity(n * m);
        for &x in ta.data() {
            for &y in tb.data() {
                data.push(x + y + c);
            }
        }
        let needs = self.any_grad(&[a, b, bias]);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::PairwiseSum(a, b, bias),
            needs,
        ))
    }

    /// Stacks equally sized 1-D tensors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or(Error::EmptyReduction("stack_rows"))?;
        let n = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.shape().len() != 1 || t.len() != n {
                return Err(Error::dim("stack_rows", self.shape(*first), t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let needs = self.any_grad(rows);
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), n],
                data,
            },
            Op::StackRows(rows.to_vec()),
            needs,
        ))
    }

    /// Column `j` of a matrix as a 1-D tensor.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.as_matrix();
        if j >= n {
            return Err(Error::dim("column", tx.shape(), &[j]));
        }
        let data = (0..m).map(|i| tx.data()[i * n + j]).collect();
        let needs = self.any_grad(&[x]);
        Ok(self.push(Tensor { shape: vec![m], data }, Op::Column(x, j), needs))
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, eps: T) -> Var {
        let out = self.value(x).map(|v| v.max(eps).ln());
        let needs = self.any_grad(&[x]);
        self.push(out, Op::LogClamped(x, eps), needs)
    }

    /// Reverse pass from a scalar `loss`. Gradients of leaves created with
    /// `requires_grad` are then available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.tape != self.id {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }
        if self.consumed {
            return Err(Error::TapeReused);
        }
        let lv = &self.nodes[loss.index].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(vec![T::one()]);

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }

        self.grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match (&n.op, n.needs_grad) {
                (Op::Leaf, true) => Some(match grads.get_mut(i).and_then(Option::take) {
                    Some(data) => Tensor {
                        shape: n.value.shape().to_vec(),
                        data,
                    },
                    None => Tensor::zeros(n.value.shape().to_vec()),
                }),
                _ => None,
            })
            .collect();
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.index].value;
        let wants = |v: Var| nodes[v.index].needs_grad;
        let out = &nodes[idx].value;

        // Adds `f(i)` into the gradient slot of `v`.
        fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl Fn(usize) -> T) {
            let slot = grads[v.index].get_or_insert_with(|| vec![T::zero(); len]);
            for (i, s) in slot.iter_mut().enumerate() {
                *s += f(i);
            }
        }

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).as_matrix();
                let n = val(*b).shape()[1];
                if wants(*a) {
                    let slot = grads[a.index].get_or_insert_with(|| vec![T::zero(); m * k]);
                    gemm_nt_acc(g, val(*b).data(), slot, m, n, k);
                }
                if wants(*b) {
                    let slot = grads[b.index].get_or_insert_with(|| vec![T::zero(); k * n]);
                    gemm_tn_acc(val(*a).data(), g, slot, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).as_matrix();
                let n = val(*b).shape()[0];
                if wants(*a) {
                    let slot = grads[a.index].get_or_insert_with(|| vec![T::zero(); m * k]);
                    gemm_acc(g, val(*b).data(), slot, m, n, k);
                }
                if wants(*b) {
                    let slot = grads[b.index].get_or_insert_with(|| vec![T::zero(); n * k]);
                    gemm_tn_acc(g, val(*a).data(), slot, m, n, k);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
                if wants(*b) {
                    acc(grads, *b, g.len(), |i| g[i]);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
                if wants(*b) {
                    acc(grads, *b, g.len(), |i| -g[i]);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    acc(grads, *a, g.len(), |i| g[i] * vb[i]);
                }
                if wants(*b) {
                    acc(grads, *b, g.len(), |i| g[i] * va[i]);
                }
            }
            Op::AddRowBias(a, bias) => {
                if wants(*a) {
                    acc(grads, *a, g.len(), |i| g[i]);
                }
                if wants(*bias) {
                    let n = val(*bias).len();
                    let slot = grads[bias.index].get_or_insert_with(|| vec![T::zero(); n]);
                    for row in g.chunks(n.max(1)) {
                        for (s, &v) in slot.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Act(kind, x) => {
                let (vx, vy) = (val(*x).data(), out.data());
                acc(grads, *x, g.len(), |i| g[i] * kind.derivative(vx[i], vy[i]));
            }
            Op::Pointwise(x, d) => {
                let (vx, vy) = (val(*x).data(), out.data());
                acc(grads, *x, g.len(), |i| g[i] * d(vx[i], vy[i]));
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = out.as_matrix();
                let y = out.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yi * (gi - dot);
                    }
                }
                acc(grads, *x, dx.len(), |i| dx[i]);
            }
            Op::Concat(a, b) => {
                let p = *val(*a).shape().last().unwrap();
                let q = *val(*b).shape().last().unwrap();
                let w = p + q;
                if wants(*a) {
                    acc(grads, *a, val(*a).len(), |i| g[(i / p.max(1)) * w + i % p.max(1)]);
                }
                if wants(*b) {
                    acc(grads, *b, val(*b).len(), |i| g[(i / q.max(1)) * w + p + i % q.max(1)]);
                }
            }
            Op::MeanRows(x) => {
                let rows = val(*x).shape()[0];
                let n = g.len();
                let scale = T::one() / T::of(rows as f64);
                acc(grads, *x, rows * n, |i| g[i % n] * scale);
            }
            Op::Scale(x, f) => acc(grads, *x, g.len(), |i| g[i] * *f),
            Op::Dropout(x, mask) => acc(grads, *x, g.len(), |i| g[i] * mask[i]),
            Op::Sum(x) => acc(grads, *x, val(*x).len(), |_| g[0]),
            Op::SliceRows(x, start) => {
                let (_, n) = val(*x).as_matrix();
                let offset = start * n;
                let len = g.len();
                acc(grads, *x, val(*x).len(), |i| {
                    if i >= offset && i < offset + len {
                        g[i - offset]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::PairwiseSum(a, b, bias) => {
                let (n, m) = (val(*a).len(), val(*b).len());
                if wants(*a) {
                    acc(grads, *a, n, |i| g[i * m..(i + 1) * m].iter().copied().sum());
                }
                if wants(*b) {
                    acc(grads, *b, m, |j| (0..n).map(|i| g[i * m + j]).sum());
                }
                if wants(*bias) {
                    acc(grads, *bias, 1, |_| g.iter().copied().sum());
                }
            }
            Op::StackRows(rows) => {
                let n = out.shape()[1];
                for (r, v) in rows.iter().enumerate() {
                    if wants(*v) {
                        acc(grads, *v, n, |i| g[r * n + i]);
                    }
                }
            }
            Op::Column(x, j) => {
                let (_, n) = val(*x).as_matrix();
                acc(grads, *x, val(*x).len(), |i| if i % n == *j { g[i / n] } else { T::zero() });
            }
            Op::LogClamped(x, eps) => {
                let vx = val(*x).data();
                acc(grads, *x, g.len(), |i| if vx[i] > *eps { g[i] / vx[i] } else { T::zero() });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);

        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let y = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let z = tape.matmul(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[11.0]);
        assert_eq!(tape.value(z).shape(), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b).unwrap_err() {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn elementwise_rejects_mismatched_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2]));
        let b = tape.constant(Tensor::zeros(vec![3]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.mul(a, b), Err(Error::Dimension { .. })));
        let m = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(tape.add_row_bias(m, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn add_and_annihilator() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.5, -2.0, 0.25]));
        let z = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.mul(x, z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn activations_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(x).unwrap();
        let h = tape.tanh(x).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(h).item(), 0.0);
    }

    #[test]
    fn non_finite_activation_input_is_numeric_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.tanh(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 3], &[0.0, 0.0, 0.0, 1000.0, 1000.0, 999.0, 1.0, 2.0, 3.0]));
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!(v[..3].iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[3..6].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // exp(k) / (e + e² + e³) evaluated directly
        let z: f64 = (1.0f64).exp() + (2.0f64).exp() + (3.0f64).exp();
        let direct = [(1.0f64).exp() / z, (2.0f64).exp() / z, (3.0f64).exp() / z];
        for k in 0..3 {
            assert!((v[6 + k] - direct[k]).abs() < 1e-12);
        }
        assert!((v[6] - 0.09003).abs() < 1e-4);
        assert!((v[7] - 0.24473).abs() < 1e-4);
        assert!((v[8] - 0.66524).abs() < 1e-4);
    }

    #[test]
    fn concat_and_mean() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let b = tape.param(t(&[1], &[3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let e = tape.constant(Tensor::zeros(vec![0]));
        let same = tape.concat(a, e).unwrap();
        assert_eq!(tape.value(same).data(), &[1.0, 2.0]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0]);

        let mut tape = Tape::new();
        let m = tape.constant(t(&[2, 2], &[1.0, 3.0, 3.0, 5.0]));
        let mu = tape.mean_rows(m).unwrap();
        assert_eq!(tape.value(mu).data(), &[2.0, 4.0]);
        let one = tape.constant(t(&[1, 2], &[7.0, -1.0]));
        let mu1 = tape.mean_rows(one).unwrap();
        assert_eq!(tape.value(mu1).data(), &[7.0, -1.0]);
        let empty = tape.constant(Tensor::zeros(vec![0, 2]));
        assert!(matches!(tape.mean_rows(empty), Err(Error::EmptyReduction(_))));
    }

    #[test]
    fn concat_leading_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 1]));
        assert!(matches!(tape.concat(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dropout_identity_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, true, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(tape.dropout(x, -0.1, true, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        // Monte-Carlo oracle: mean of the dropped output over 10⁴ trials.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = t(&[8], &[0.5, 1.0, 1.5, 2.0, -0.5, 3.0, 0.25, 1.25]);
        let target: f64 = input.data().iter().sum::<f64>() / 8.0;
        let mut total = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
            total += tape.value(y).data().iter().sum::<f64>() / 8.0;
        }
        let mean = total / trials as f64;
        assert!((mean - target).abs() / target < 0.02, "{mean} vs {target}");
    }

    #[test]
    fn backward_contracts() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, -3.0]));
        let sq = tape.mul(x, x).unwrap();
        assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -6.0]);
        assert!(matches!(tape.backward(s), Err(Error::TapeReused)));
    }

    #[test]
    fn gradient_accumulates_over_consumers() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn loss_from_other_tape_is_rejected() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.param(Tensor::zeros(vec![1]));
        let s = a.sum(x);
        assert!(matches!(b.backward(s), Err(Error::Contract(_))));
    }
}
