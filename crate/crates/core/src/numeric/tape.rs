//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] owns every intermediate value produced during one forward
//! pass. [`Var`] is a cheap handle into it. Records are appended in
//! evaluation order, so the record list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::sync::Arc;

use super::tensor::{gemm_nt, gemm_tn};
use super::{NumericError, Tensor};

/// Per-target neighbor lists in compressed form: the sources attending into
/// node `i` are `sources[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Neighborhoods {
    /// Builds the lists from `(target, source)` pairs over `nodes` nodes.
    /// Sources keep the order in which they were given per target.
    pub fn from_pairs(nodes: usize, pairs: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; nodes + 1];
        for &(t, _) in pairs {
            counts[t + 1] += 1;
        }
        for i in 0..nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut sources = vec![0; pairs.len()];
        for &(t, s) in pairs {
            sources[fill[t]] = s;
            fill[t] += 1;
        }
        Self { offsets, sources }
    }

    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entries(&self) -> usize {
        self.sources.len()
    }

    pub fn of(&self, target: usize) -> &[usize] {
        &self.sources[self.offsets[target]..self.offsets[target + 1]]
    }

    pub fn range(&self, target: usize) -> std::ops::Range<usize> {
        self.offsets[target]..self.offsets[target + 1]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }
}

struct RelAttentionRecord {
    z: usize,
    att: usize,
    heads: usize,
    nbrs: Arc<Neighborhoods>,
    mean_norm: bool,
    slope: f64,
    /// Pre-activation scores, `heads × entries`.
    pre: Vec<f64>,
    /// Normalized coefficients, `heads × entries`.
    alpha: Arc<Vec<f64>>,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine { x: usize, scale: f64 },
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    LeakyRelu { x: usize, slope: f64 },
    Softmax(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    GatherRows { x: usize, index: Arc<[usize]> },
    BagMean { table: usize, bags: Arc<[Vec<usize>]> },
    Sum(usize),
    SumRows(usize),
    Pick { x: usize, r: usize, c: usize },
    SegmentMax { x: usize, winners: Vec<Option<usize>> },
    RelAttention(Box<RelAttentionRecord>),
    CrossEntropy { x: usize, target: usize, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Softmax(..) => "softmax",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::BagMean { .. } => "bag_mean",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::Pick { .. } => "pick",
            Op::SegmentMax { .. } => "segment_max",
            Op::RelAttention(..) => "rel_attention",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by record.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], but disconnected values get an all-zero
    /// gradient of matching shape.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input; gradients are not tracked for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Arc::new(value), false)
    }

    /// A differentiable input.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Arc::new(value), true)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var<'_>, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn check<'t>(&'t self, vars: &[Var<'t>]) -> Result<(), NumericError> {
        if vars.iter().all(|v| std::ptr::eq(v.tape, self)) {
            Ok(())
        } else {
            Err(NumericError::TapeMismatch)
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Concatenates along columns; all parts share a row count.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, NumericError> {
        self.check(parts)?;
        let first = parts.first().ok_or(NumericError::EmptyInput { op: "concat_cols" })?;
        let rows = first.shape()[0];
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for v in &values {
            if v.rows() != rows {
                return Err(NumericError::Shape {
                    op: "concat_cols",
                    lhs: first.shape(),
                    rhs: v.shape(),
                });
            }
        }
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        self.push(Tensor::new(rows, cols, out)?, Op::ConcatCols(ids), rg)
    }

    /// Stacks parts vertically; all parts share a column count.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, NumericError> {
        self.check(parts)?;
        let first = parts.first().ok_or(NumericError::EmptyInput { op: "concat_rows" })?;
        let cols = first.shape()[1];
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            if v.cols() != cols {
                return Err(NumericError::Shape {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        self.push(Tensor::new(rows, cols, out)?, Op::ConcatRows(ids), rg)
    }

    /// Backpropagates from a scalar `loss` through every recorded operation.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NumericError> {
        self.check(&[loss])?;
        let nodes = self.nodes.borrow();
        let [r, c] = nodes[loss.id].value.shape();
        if r != 1 || c != 1 {
            return Err(NumericError::NonScalarLoss { shape: [r, c] });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::scalar(1.0));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !matches!(node.op, Op::Leaf) {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::zeros(t.rows(), t.cols())
}

#[inline]
fn bcast_index(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: &Tensor, shape: [usize; 2], f: impl Fn(usize, usize, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let cols = g.cols();
    let data = out.data_mut();
    for r in 0..g.rows() {
        for c in 0..cols {
            data[bcast_index(shape, r, c)] += f(r, c, g.get(r, c));
        }
    }
    out
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let needs = |id: usize| nodes[id].requires_grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &id in [a, b] {
                if needs(id) {
                    let shape = val(id).shape();
                    let d = if shape == g.shape() {
                        g.clone()
                    } else {
                        reduce_to(g, shape, |_, _, v| v)
                    };
                    accumulate(nodes, grads, id, d);
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                let d = reduce_to(g, val(*a).shape(), |_, _, v| v);
                accumulate(nodes, grads, *a, d);
            }
            if needs(*b) {
                let d = reduce_to(g, val(*b).shape(), |_, _, v| -v);
                accumulate(nodes, grads, *b, d);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if needs(*a) {
                let sb = vb.shape();
                let d = reduce_to(g, va.shape(), |r, c, v| v * vb.data()[bcast_index(sb, r, c)]);
                accumulate(nodes, grads, *a, d);
            }
            if needs(*b) {
                let sa = va.shape();
                let d = reduce_to(g, vb.shape(), |r, c, v| v * va.data()[bcast_index(sa, r, c)]);
                accumulate(nodes, grads, *b, d);
            }
        }
        Op::Affine { x, scale } => {
            accumulate(nodes, grads, *x, g.map(|v| v * scale));
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (p, q, r) = (va.rows(), va.cols(), vb.cols());
            if needs(*a) {
                let mut d = vec![0.0; p * q];
                gemm_nt(g.data(), vb.data(), &mut d, p, r, q);
                accumulate(nodes, grads, *a, Tensor::new(p, q, d).expect("shape"));
            }
            if needs(*b) {
                let mut d = vec![0.0; q * r];
                gemm_tn(va.data(), g.data(), &mut d, p, q, r);
                accumulate(nodes, grads, *b, Tensor::new(q, r, d).expect("shape"));
            }
        }
        Op::Transpose(x) => accumulate(nodes, grads, *x, g.transpose()),
        Op::Sigmoid(x) => {
            let d = elementwise(g, y, |gv, yv| gv * yv * (1.0 - yv));
            accumulate(nodes, grads, *x, d);
        }
        Op::Tanh(x) => {
            let d = elementwise(g, y, |gv, yv| gv * (1.0 - yv * yv));
            accumulate(nodes, grads, *x, d);
        }
        Op::Exp(x) => {
            let d = elementwise(g, y, |gv, yv| gv * yv);
            accumulate(nodes, grads, *x, d);
        }
        Op::Ln(x) => {
            let d = elementwise(g, val(*x), |gv, xv| gv / xv);
            accumulate(nodes, grads, *x, d);
        }
        Op::LeakyRelu { x, slope } => {
            let d = elementwise(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { gv * slope });
            accumulate(nodes, grads, *x, d);
        }
        Op::Softmax(x) => {
            let mut d = zeros_like(y);
            for r in 0..y.rows() {
                let (yr, gr) = (y.row(r), g.row(r));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (o, (yv, gv)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if needs(p) {
                    let mut d = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    accumulate(nodes, grads, p, d);
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            let cols = g.cols();
            for &p in parts {
                let h = val(p).rows();
                if needs(p) {
                    let data = g.data()[offset * cols..(offset + h) * cols].to_vec();
                    accumulate(nodes, grads, p, Tensor::new(h, cols, data).expect("shape"));
                }
                offset += h;
            }
        }
        Op::SliceRows { x, start } => {
            let mut d = zeros_like(val(*x));
            let cols = g.cols();
            d.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
            accumulate(nodes, grads, *x, d);
        }
        Op::SliceCols { x, start } => {
            let mut d = zeros_like(val(*x));
            for r in 0..g.rows() {
                d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::GatherRows { x, index } => {
            let mut d = zeros_like(val(*x));
            for (r, &src) in index.iter().enumerate() {
                for (o, v) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::BagMean { table, bags } => {
            let mut d = zeros_like(val(*table));
            for (r, bag) in bags.iter().enumerate() {
                let w = 1.0 / bag.len() as f64;
                for &b in bag {
                    for (o, v) in d.row_mut(b).iter_mut().zip(g.row(r)) {
                        *o += w * v;
                    }
                }
            }
            accumulate(nodes, grads, *table, d);
        }
        Op::Sum(x) => {
            let v = val(*x);
            accumulate(nodes, grads, *x, Tensor::filled(v.rows(), v.cols(), g.data()[0]));
        }
        Op::SumRows(x) => {
            let v = val(*x);
            let mut d = zeros_like(v);
            for r in 0..v.rows() {
                d.row_mut(r).copy_from_slice(g.row(0));
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::Pick { x, r, c } => {
            let mut d = zeros_like(val(*x));
            d.set(*r, *c, g.data()[0]);
            accumulate(nodes, grads, *x, d);
        }
        Op::SegmentMax { x, winners } => {
            let mut d = zeros_like(val(*x));
            for (k, w) in winners.iter().enumerate() {
                if let Some(w) = w {
                    d.data_mut()[*w] += g.data()[k];
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::CrossEntropy { x, target, probs } => {
            let v = val(*x);
            let scale = g.data()[0];
            let mut d = Tensor::new(v.rows(), v.cols(), probs.iter().map(|p| p * scale).collect())
                .expect("shape");
            d.data_mut()[*target] -= scale;
            accumulate(nodes, grads, *x, d);
        }
        Op::RelAttention(rec) => rel_attention_backward(nodes, rec, g, grads),
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.rows(), g.cols(), data).expect("shape")
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2], NumericError> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(NumericError::Shape { op, lhs: a, rhs: b }),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, value: Tensor) -> Result<Var<'t>, NumericError> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>, NumericError> {
        self.tape.check(&[self, other])?;
        let (a, b) = (self.value(), other.value());
        let [rows, cols] = broadcast_shape(name, a.shape(), b.shape())?;
        let out = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(
                        a.data()[bcast_index(a.shape(), r, c)],
                        b.data()[bcast_index(b.shape(), r, c)],
                    ));
                }
            }
            out
        };
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(Tensor::new(rows, cols, out)?, op, rg)
    }

    /// Element-wise sum with row/column broadcasting of unit extents.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Element-wise (Hadamard) product with broadcasting.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// `scale * x + shift`
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(|v| scale * v + shift);
        self.unary(Op::Affine { x: self.id, scale }, out)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>, NumericError> {
        self.affine(factor, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(self) -> Result<Var<'t>, NumericError> {
        self.affine(-1.0, 1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, NumericError> {
        self.tape.check(&[self, other])?;
        let out = self.value().matmul(&other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(out, Op::MatMul(self.id, other.id), rg)
    }

    pub fn t(self) -> Result<Var<'t>, NumericError> {
        let out = self.value().transpose();
        self.unary(Op::Transpose(self.id), out)
    }

    pub fn sigmoid(self) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), out)
    }

    pub fn tanh(self) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(f64::tanh);
        self.unary(Op::Tanh(self.id), out)
    }

    pub fn exp(self) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), out)
    }

    pub fn ln(self) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(f64::ln);
        self.unary(Op::Ln(self.id), out)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>, NumericError> {
        let out = self.value().map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(Op::LeakyRelu { x: self.id, slope }, out)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(self) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        let mut out = zeros_like(&v);
        for r in 0..v.rows() {
            softmax_into(v.row(r), None, out.row_mut(r))?;
        }
        self.unary(Op::Softmax(self.id), out)
    }

    /// Row-wise softmax restricted to positions where `mask` is true; masked
    /// positions come out as exactly zero. `mask` is row-major over the
    /// whole tensor.
    pub fn masked_softmax(self, mask: &[bool]) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if mask.len() != v.len() {
            return Err(NumericError::Shape {
                op: "masked_softmax",
                lhs: v.shape(),
                rhs: [1, mask.len()],
            });
        }
        let mut out = zeros_like(&v);
        let cols = v.cols();
        for r in 0..v.rows() {
            softmax_into(v.row(r), Some(&mask[r * cols..(r + 1) * cols]), out.row_mut(r))?;
        }
        self.unary(Op::Softmax(self.id), out)
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if start >= end || end > v.rows() {
            return Err(NumericError::OutOfRange {
                op: "slice_rows",
                index: end,
                len: v.rows(),
            });
        }
        let cols = v.cols();
        let out = Tensor::new(end - start, cols, v.data()[start * cols..end * cols].to_vec())?;
        self.unary(Op::SliceRows { x: self.id, start }, out)
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if start >= end || end > v.cols() {
            return Err(NumericError::OutOfRange {
                op: "slice_cols",
                index: end,
                len: v.cols(),
            });
        }
        let mut out = Vec::with_capacity(v.rows() * (end - start));
        for r in 0..v.rows() {
            out.extend_from_slice(&v.row(r)[start..end]);
        }
        let out = Tensor::new(v.rows(), end - start, out)?;
        self.unary(Op::SliceCols { x: self.id, start }, out)
    }

    /// Selects rows by index; repeats are allowed and their gradients add up.
    pub fn gather_rows(self, index: Arc<[usize]>) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if index.is_empty() {
            return Err(NumericError::EmptyInput { op: "gather_rows" });
        }
        let mut out = Vec::with_capacity(index.len() * v.cols());
        for &i in index.iter() {
            if i >= v.rows() {
                return Err(NumericError::OutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: v.rows(),
                });
            }
            out.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(index.len(), v.cols(), out)?;
        self.unary(Op::GatherRows { x: self.id, index }, out)
    }

    /// Output row `t` is the mean of the table rows listed in `bags[t]`.
    pub fn bag_mean(self, bags: Arc<[Vec<usize>]>) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if bags.is_empty() {
            return Err(NumericError::EmptyInput { op: "bag_mean" });
        }
        let cols = v.cols();
        let mut out = Tensor::zeros(bags.len(), cols);
        for (t, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(NumericError::EmptyInput { op: "bag_mean" });
            }
            let w = 1.0 / bag.len() as f64;
            for &b in bag {
                if b >= v.rows() {
                    return Err(NumericError::OutOfRange {
                        op: "bag_mean",
                        index: b,
                        len: v.rows(),
                    });
                }
                for (o, x) in out.row_mut(t).iter_mut().zip(v.row(b)) {
                    *o += w * x;
                }
            }
        }
        self.unary(Op::BagMean { table: self.id, bags }, out)
    }

    pub fn sum(self) -> Result<Var<'t>, NumericError> {
        let s = self.value().data().iter().sum();
        self.unary(Op::Sum(self.id), Tensor::scalar(s))
    }

    /// Column sums as a `1 × cols` row.
    pub fn sum_rows(self) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        let mut out = vec![0.0; v.cols()];
        for r in 0..v.rows() {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        self.unary(Op::SumRows(self.id), Tensor::row_vector(out)?)
    }

    /// The single entry at `(r, c)` as a scalar.
    pub fn pick(self, r: usize, c: usize) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if r >= v.rows() || c >= v.cols() {
            return Err(NumericError::OutOfRange {
                op: "pick",
                index: r * v.cols() + c,
                len: v.len(),
            });
        }
        let out = Tensor::scalar(v.get(r, c));
        self.unary(Op::Pick { x: self.id, r, c }, out)
    }

    /// Per-group maximum over the flattened entries of `self`, as an
    /// `n × 1` column. Empty groups yield `sentinel`, which carries no
    /// gradient. Ties go to the lowest index.
    pub fn segment_max(self, groups: &[Vec<usize>], sentinel: f64) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if groups.is_empty() {
            return Err(NumericError::EmptyInput { op: "segment_max" });
        }
        let mut out = Vec::with_capacity(groups.len());
        let mut winners = Vec::with_capacity(groups.len());
        for group in groups {
            let mut best: Option<usize> = None;
            for &i in group {
                if i >= v.len() {
                    return Err(NumericError::OutOfRange {
                        op: "segment_max",
                        index: i,
                        len: v.len(),
                    });
                }
                match best {
                    Some(b) if v.data()[b] > v.data()[i] || (v.data()[b] == v.data()[i] && b < i) => {}
                    _ => best = Some(i),
                }
            }
            out.push(best.map_or(sentinel, |b| v.data()[b]));
            winners.push(best);
        }
        let out = Tensor::column(out)?;
        self.unary(Op::SegmentMax { x: self.id, winners }, out)
    }

    /// `-log softmax(x)[target]` over the flattened entries.
    pub fn cross_entropy(self, target: usize) -> Result<Var<'t>, NumericError> {
        let v = self.value();
        if target >= v.len() {
            return Err(NumericError::OutOfRange {
                op: "cross_entropy",
                index: target,
                len: v.len(),
            });
        }
        let mut probs = vec![0.0; v.len()];
        softmax_into(v.data(), None, &mut probs)?;
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(lse - v.data()[target]);
        self.unary(
            Op::CrossEntropy {
                x: self.id,
                target,
                probs,
            },
            out,
        )
    }

    /// Multi-head attention aggregation over a fixed neighbor structure.
    ///
    /// `self` holds projected node states (`m × D`), split into `heads`
    /// contiguous column blocks of width `d = D / heads`. `att` is
    /// `heads × 2d`; its row `k` scores the pair `(i, j)` as
    /// `leaky_relu(att_k · [z_i^k ‖ z_j^k])`. Scores are normalized with a
    /// softmax over each target's sources, and target `i` receives
    /// `Σ_j α_ij / |N_i| · z_j^k` (without the `1/|N_i|` factor when
    /// `mean_norm` is off). Targets without sources receive zeros.
    ///
    /// Also returns the coefficients, laid out `heads × entries` in the
    /// order of [`Neighborhoods::sources`].
    pub fn rel_attention(
        self,
        att: Var<'t>,
        nbrs: Arc<Neighborhoods>,
        mean_norm: bool,
        slope: f64,
    ) -> Result<(Var<'t>, Arc<Vec<f64>>), NumericError> {
        self.tape.check(&[self, att])?;
        let (z, a) = (self.value(), att.value());
        let heads = a.rows();
        let (m, width) = (z.rows(), z.cols());
        if heads == 0 || width % heads != 0 || a.cols() * heads != 2 * width {
            return Err(NumericError::Shape {
                op: "rel_attention",
                lhs: z.shape(),
                rhs: a.shape(),
            });
        }
        if nbrs.nodes() != m {
            return Err(NumericError::OutOfRange {
                op: "rel_attention",
                index: nbrs.nodes(),
                len: m,
            });
        }
        if let Some(&bad) = nbrs.sources().iter().find(|&&s| s >= m) {
            return Err(NumericError::OutOfRange {
                op: "rel_attention",
                index: bad,
                len: m,
            });
        }
        let d = width / heads;
        let entries = nbrs.entries();
        let mut pre = vec![0.0; heads * entries];
        let mut alpha = vec![0.0; heads * entries];
        let mut out = Tensor::zeros(m, width);
        let mut left = vec![0.0; m];
        let mut right = vec![0.0; m];
        for h in 0..heads {
            let (al, ar) = a.row(h).split_at(d);
            for i in 0..m {
                let zi = &z.row(i)[h * d..(h + 1) * d];
                left[i] = dot(al, zi);
                right[i] = dot(ar, zi);
            }
            for i in 0..m {
                let range = nbrs.range(i);
                if range.is_empty() {
                    continue;
                }
                let norm = if mean_norm { range.len() as f64 } else { 1.0 };
                let base = h * entries;
                let mut max = f64::NEG_INFINITY;
                for e in range.clone() {
                    let p = left[i] + right[nbrs.sources[e]];
                    pre[base + e] = p;
                    let s = if p > 0.0 { p } else { slope * p };
                    alpha[base + e] = s;
                    max = max.max(s);
                }
                let mut total = 0.0;
                for e in range.clone() {
                    let w = (alpha[base + e] - max).exp();
                    alpha[base + e] = w;
                    total += w;
                }
                for e in range {
                    alpha[base + e] /= total;
                    let w = alpha[base + e] / norm;
                    let src = nbrs.sources[e];
                    let zj = &z.row(src)[h * d..(h + 1) * d];
                    let o = &mut out.row_mut(i)[h * d..(h + 1) * d];
                    for (ov, zv) in o.iter_mut().zip(zj) {
                        *ov += w * zv;
                    }
                }
            }
        }
        let alpha = Arc::new(alpha);
        let rg = self.requires_grad() || att.requires_grad();
        let rec = RelAttentionRecord {
            z: self.id,
            att: att.id,
            heads,
            nbrs,
            mean_norm,
            slope,
            pre,
            alpha: Arc::clone(&alpha),
        };
        let var = self.tape.push(out, Op::RelAttention(Box::new(rec)), rg)?;
        Ok((var, alpha))
    }
}

fn rel_attention_backward(nodes: &[Node], rec: &RelAttentionRecord, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let z = &nodes[rec.z].value;
    let a = &nodes[rec.att].value;
    let (m, width) = (z.rows(), z.cols());
    let heads = rec.heads;
    let d = width / heads;
    let nbrs = &rec.nbrs;
    let entries = nbrs.entries();
    let mut dz = Tensor::zeros(m, width);
    let mut da = Tensor::zeros(a.rows(), a.cols());
    let mut dleft = vec![0.0; m];
    let mut dright = vec![0.0; m];
    let mut dalpha = Vec::new();
    for h in 0..heads {
        dleft.iter_mut().for_each(|v| *v = 0.0);
        dright.iter_mut().for_each(|v| *v = 0.0);
        let base = h * entries;
        for i in 0..m {
            let range = nbrs.range(i);
            if range.is_empty() {
                continue;
            }
            let norm = if rec.mean_norm { range.len() as f64 } else { 1.0 };
            let gi = &g.row(i)[h * d..(h + 1) * d];
            dalpha.clear();
            let mut weighted = 0.0;
            for e in range.clone() {
                let src = nbrs.sources[e];
                let al = rec.alpha[base + e];
                let zj = &z.row(src)[h * d..(h + 1) * d];
                let da_e = dot(gi, zj) / norm;
                dalpha.push(da_e);
                weighted += al * da_e;
                let dzj = &mut dz.row_mut(src)[h * d..(h + 1) * d];
                for (o, gv) in dzj.iter_mut().zip(gi) {
                    *o += al / norm * gv;
                }
            }
            for (k, e) in range.enumerate() {
                let src = nbrs.sources[e];
                let de = rec.alpha[base + e] * (dalpha[k] - weighted);
                let dpre = if rec.pre[base + e] > 0.0 { de } else { de * rec.slope };
                dleft[i] += dpre;
                dright[src] += dpre;
            }
        }
        let (al, ar) = a.row(h).split_at(d);
        for i in 0..m {
            if dleft[i] == 0.0 && dright[i] == 0.0 {
                continue;
            }
            let zi = z.row(i)[h * d..(h + 1) * d].to_vec();
            let dzi = &mut dz.row_mut(i)[h * d..(h + 1) * d];
            for k in 0..d {
                dzi[k] += dleft[i] * al[k] + dright[i] * ar[k];
            }
            let dah = da.row_mut(h);
            for k in 0..d {
                dah[k] += dleft[i] * zi[k];
                dah[d + k] += dright[i] * zi[k];
            }
        }
    }
    accumulate(nodes, grads, rec.z, dz);
    accumulate(nodes, grads, rec.att, da);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of `x` into `out`, honoring an optional mask.
pub(crate) fn softmax_into(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) -> Result<(), NumericError> {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..x.len())
        .filter(|&i| on(i))
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NumericError::EmptySupport);
    }
    let mut total = 0.0;
    for i in 0..x.len() {
        out[i] = if on(i) { (x[i] - max).exp() } else { 0.0 };
        total += out[i];
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Plain forward helpers mirroring the recorded ops, for callers that do not
/// need gradients.
pub mod eager {
    use super::*;

    pub fn masked_softmax(x: &Tensor, mask: &[bool]) -> Result<Tensor, NumericError> {
        let tape = Tape::new();
        let v = tape.constant(x.clone()).masked_softmax(mask)?;
        Ok((*v.value()).clone())
    }

    pub fn softmax(x: &[f64]) -> Result<Vec<f64>, NumericError> {
        let mut out = vec![0.0; x.len()];
        softmax_into(x, None, &mut out)?;
        Ok(out)
    }
}
