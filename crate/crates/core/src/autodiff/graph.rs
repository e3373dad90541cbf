use std::borrow::Cow;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Prelu(Var, Var),
    MaskedSoftmax(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Log(Var),
    Exp(Var),
    Abs(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Gather(Var, Vec<usize>),
    OuterDiff(Var, Var),
    PairwiseAdd(Var, Var),
    Transpose(Var),
    NormalizeRows(Var),
    Reshape(Var),
    SliceRows(Var, usize),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits each node once. Parameters can be
/// recorded by reference with [`Graph::param`], which avoids copying weight
/// tables into every per-slate tape.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(Tensor::from_parts(shape, data)), op, requires_grad)
    }

    /// Records a borrowed tensor; it is differentiated iff `requires_grad` is set.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(Cow::Borrowed(tensor), Op::Leaf, rg)
    }

    /// Records an owned leaf; it is differentiated iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(Cow::Owned(tensor), Op::Leaf, rg)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        matmul_acc(ta.data(), tb.data(), &mut out, n, k, m);
        Ok(self.push_op(vec![n, m], out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push_op(shape, data, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds `bias` to every row of `x`; `bias` has one entry per column or a single entry.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c && tb.len() != 1 {
            return Err(dim_err("add_bias", tx, tb));
        }
        let b = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if b.len() == 1 { b[0] } else { b[i % c] })
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_op(shape, data, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let shape = t.shape().to_vec();
        self.push_op(shape, data, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push_op(shape, data, op, &[x])
    }

    /// Parametric ReLU with one slope per column of `x`, or one shared slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (tx, ta) = (self.value(x), self.value(slope));
        let c = tx.cols();
        if ta.len() != c && ta.len() != 1 {
            return Err(dim_err("prelu", tx, ta));
        }
        let a = ta.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 {
                    v
                } else {
                    v * if a.len() == 1 { a[0] } else { a[i % c] }
                }
            })
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push_op(shape, data, Op::Prelu(x, slope), &[x, slope]))
    }

    /// Row-wise softmax restricted to unmasked (`true`) positions.
    ///
    /// `mask` covers either one row (shared by all rows) or the whole tensor.
    /// Masked outputs are exactly zero. The max used for stabilization is
    /// taken over unmasked entries only, so padded logits never matter.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        let c = t.cols();
        if mask.len() != c && mask.len() != t.len() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let shared = mask.len() == c;
        let mut out = vec![0.0; t.len()];
        for r in 0..t.rows() {
            let row = t.row(r);
            let mrow = if shared { mask } else { &mask[r * c..(r + 1) * c] };
            if !mrow.iter().any(|&m| m) {
                return Err(Error::InvalidMask { row: r });
            }
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * c..(r + 1) * c];
            let mut sum = 0.0;
            for ((o, &v), &m) in orow.iter_mut().zip(row).zip(mrow) {
                if m {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push_op(shape, out, Op::MaskedSoftmax(logits), &[logits]))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let c = self.value(logits).cols();
        self.masked_softmax(logits, &vec![true; c])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() > 2 || tb.rank() > 2 || ta.rows() != tb.rows() {
            return Err(dim_err("concat", ta, tb));
        }
        let (ca, cb, rows) = (ta.cols(), tb.cols(), ta.rows());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let shape = if ta.rank() <= 1 && tb.rank() <= 1 {
            vec![ca + cb]
        } else {
            vec![rows, ca + cb]
        };
        Ok(self.push_op(shape, out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Concatenation along the first axis of two matrices with equal width.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() > 2 || tb.rank() > 2 || ta.cols() != tb.cols() {
            return Err(dim_err("concat_rows", ta, tb));
        }
        let rows = ta.rows() + tb.rows();
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        out.extend_from_slice(ta.data());
        out.extend_from_slice(tb.data());
        let shape = vec![rows, ta.cols()];
        Ok(self.push_op(shape, out, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Vec::new(), vec![s], Op::Mean(x), &[x])
    }

    /// Sums a matrix over `axis` (0: down columns, 1: across rows).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || axis > 1 {
            return Err(Error::Dimension {
                op: "sum_axis",
                left: t.shape().to_vec(),
                right: vec![axis],
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = if axis == 0 {
            let mut o = vec![0.0; c];
            for i in 0..r {
                for (acc, &v) in o.iter_mut().zip(t.row(i)) {
                    *acc += v;
                }
            }
            o
        } else {
            (0..r).map(|i| t.row(i).iter().sum()).collect()
        };
        let shape = vec![out.len()];
        Ok(self.push_op(shape, out, Op::SumAxis(x, axis), &[x]))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(sigmoid(x))`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.map(x, log_sigmoid, Op::LogSigmoid(x))
    }

    /// Gathers rows of `table` (embedding lookup); the gradient scatter-adds back.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op: "gather",
                left: t.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::Dimension {
                    op: "gather",
                    left: t.shape().to_vec(),
                    right: vec![i],
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let shape = vec![indices.len(), d];
        Ok(self.push_op(shape, out, Op::Gather(table, indices.to_vec()), &[table]))
    }

    /// `out[i, j] = a[i] - b[j]` for vectors `a`, `b`.
    pub fn outer_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(dim_err("outer_diff", ta, tb));
        }
        let mut out = Vec::with_capacity(ta.len() * tb.len());
        for &x in ta.data() {
            out.extend(tb.data().iter().map(|&y| x - y));
        }
        let shape = vec![ta.len(), tb.len()];
        Ok(self.push_op(shape, out, Op::OuterDiff(a, b), &[a, b]))
    }

    /// Broadcast sum over every row pair: `out[i * n + j, :] = a[i, :] + b[j, :]`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols() {
            return Err(dim_err("pairwise_add", ta, tb));
        }
        let (m, n, c) = (ta.rows(), tb.rows(), ta.cols());
        let mut out = Vec::with_capacity(m * n * c);
        for i in 0..m {
            let ar = ta.row(i);
            for j in 0..n {
                out.extend(ar.iter().zip(tb.row(j)).map(|(x, y)| x + y));
            }
        }
        Ok(self.push_op(vec![m * n, c], out, Op::PairwiseAdd(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                left: t.shape().to_vec(),
                right: Vec::new(),
            });
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(self.push_op(vec![c, r], out, Op::Transpose(x), &[x]))
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = t.shape().to_vec();
        self.push_op(shape, out, Op::NormalizeRows(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape,
            });
        }
        let data = t.data().to_vec();
        Ok(self.push_op(shape, data, Op::Reshape(x), &[x]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.rows() {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let c = t.cols();
        let data = t.data()[start * c..end * c].to_vec();
        Ok(self.push_op(vec![end - start, c], data, Op::SliceRows(x, start), &[x]))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::from_parts(n.value.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.as_ref();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Each arm only runs for inputs that need a gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let len = self.nodes[$v.0].value.len();
                grads[$v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    matmul_bt_acc(g, tb.data(), acc!(a), n, k, m);
                }
                if wants(*b) {
                    matmul_at_acc(ta.data(), g, acc!(b), n, k, m);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(v) {
                        for (d, &gv) in acc!(v).iter_mut().zip(g) {
                            *d += sign * gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(v) {
                        for (d, &gv) in acc!(v).iter_mut().zip(g) {
                            *d += sign * gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = val(*b).data();
                    for ((d, &gv), &o) in acc!(a).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a).data();
                    for ((d, &gv), &o) in acc!(b).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    for (d, &gv) in acc!(x).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if wants(*b) {
                    let c = val(*x).cols();
                    let db = acc!(b);
                    if db.len() == 1 {
                        db[0] += g.iter().sum::<f64>();
                    } else {
                        for (i, &gv) in g.iter().enumerate() {
                            db[i % c] += gv;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                for (d, &gv) in acc!(x).iter_mut().zip(g) {
                    *d += c * gv;
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                for (d, &gv) in acc!(x).iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Prelu(x, a) => {
                let tx = val(*x).data();
                let ta = val(*a).data();
                let c = val(*x).cols();
                let slope = |i: usize| if ta.len() == 1 { 0 } else { i % c };
                if wants(*x) {
                    for (i, (d, &gv)) in acc!(x).iter_mut().zip(g).enumerate() {
                        *d += if tx[i] >= 0.0 { gv } else { ta[slope(i)] * gv };
                    }
                }
                if wants(*a) {
                    let da = acc!(a);
                    for (i, &gv) in g.iter().enumerate() {
                        if tx[i] < 0.0 {
                            da[slope(i)] += gv * tx[i];
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let c = node.value.cols();
                let dx = acc!(x);
                for r in 0..node.value.rows() {
                    let y = &out[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dx[r * c..(r + 1) * c].iter_mut().zip(y).zip(gr) {
                        *d += yv * (gv - dot);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let w = ca + cb;
                if wants(*a) {
                    let da = acc!(a);
                    for (r, row) in da.chunks_mut(ca.max(1)).enumerate() {
                        for (d, &gv) in row.iter_mut().zip(&g[r * w..r * w + ca]) {
                            *d += gv;
                        }
                    }
                }
                if wants(*b) {
                    let db = acc!(b);
                    for (r, row) in db.chunks_mut(cb.max(1)).enumerate() {
                        for (d, &gv) in row.iter_mut().zip(&g[r * w + ca..(r + 1) * w]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).len();
                if wants(*a) {
                    for (d, &gv) in acc!(a).iter_mut().zip(&g[..split]) {
                        *d += gv;
                    }
                }
                if wants(*b) {
                    for (d, &gv) in acc!(b).iter_mut().zip(&g[split..]) {
                        *d += gv;
                    }
                }
            }
            Op::Sum(x) => {
                for d in acc!(x).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(x) => {
                let dx = acc!(x);
                let scale = g[0] / dx.len() as f64;
                for d in dx.iter_mut() {
                    *d += scale;
                }
            }
            Op::SumAxis(x, axis) => {
                let c = val(*x).cols();
                for (i, d) in acc!(x).iter_mut().enumerate() {
                    *d += if *axis == 0 { g[i % c] } else { g[i / c] };
                }
            }
            Op::Log(x) => {
                let tx = val(*x).data();
                for ((d, &gv), &xv) in acc!(x).iter_mut().zip(g).zip(tx) {
                    *d += gv / xv;
                }
            }
            Op::Exp(x) => {
                for ((d, &gv), &y) in acc!(x).iter_mut().zip(g).zip(out) {
                    *d += gv * y;
                }
            }
            Op::Abs(x) => {
                let tx = val(*x).data();
                for ((d, &gv), &xv) in acc!(x).iter_mut().zip(g).zip(tx) {
                    let sign = if xv > 0.0 {
                        1.0
                    } else if xv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *d += gv * sign;
                }
            }
            Op::Sigmoid(x) => {
                for ((d, &gv), &y) in acc!(x).iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::LogSigmoid(x) => {
                let tx = val(*x).data();
                for ((d, &gv), &xv) in acc!(x).iter_mut().zip(g).zip(tx) {
                    *d += gv * sigmoid(-xv);
                }
            }
            Op::Gather(table, indices) => {
                let d = val(*table).cols();
                let dt = acc!(table);
                for (r, &i) in indices.iter().enumerate() {
                    for (t, &gv) in dt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *t += gv;
                    }
                }
            }
            Op::OuterDiff(a, b) => {
                let m = val(*b).len();
                if wants(*a) {
                    for (i, d) in acc!(a).iter_mut().enumerate() {
                        *d += g[i * m..(i + 1) * m].iter().sum::<f64>();
                    }
                }
                if wants(*b) {
                    let db = acc!(b);
                    for row in g.chunks(m.max(1)) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d -= gv;
                        }
                    }
                }
            }
            Op::PairwiseAdd(a, b) => {
                let (m, n, c) = (val(*a).rows(), val(*b).rows(), val(*a).cols());
                if wants(*a) {
                    let da = acc!(a);
                    for i in 0..m {
                        let dr = &mut da[i * c..(i + 1) * c];
                        for j in 0..n {
                            let base = (i * n + j) * c;
                            for (d, &gv) in dr.iter_mut().zip(&g[base..base + c]) {
                                *d += gv;
                            }
                        }
                    }
                }
                if wants(*b) {
                    let db = acc!(b);
                    for i in 0..m {
                        for j in 0..n {
                            let base = (i * n + j) * c;
                            for (d, &gv) in db[j * c..(j + 1) * c].iter_mut().zip(&g[base..base + c]) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                let dx = acc!(x);
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::NormalizeRows(x) => {
                let tx = val(*x);
                let c = tx.cols().max(1);
                let dx = acc!(x);
                for r in 0..tx.rows() {
                    let s: f64 = tx.row(r).iter().sum();
                    let y = &out[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, &gv) in dx[r * c..(r + 1) * c].iter_mut().zip(gr) {
                        *d += (gv - dot) / s;
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = val(*x).cols();
                for (d, &gv) in acc!(x)[start * c..start * c + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
    }
}
