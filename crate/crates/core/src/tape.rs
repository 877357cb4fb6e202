//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so index order is a topological order and the backward
//! pass simply walks the tape from the loss down to index zero. Parameter
//! leaves remember which [`ParamId`] they were read from so that gradients
//! can be scattered back into a [`ParameterStore`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{matmul_into, softmax_scaled, Tensor};

/// Probability floor used by [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Softmax(Var, f64),
    CrossEntropy(Var, usize),
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of every parameter leaf that received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_deref().map(|g| (id, g)))
    }

    /// Adds the parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParameterStore) {
        for (id, g) in self.params() {
            let slot = store.by_id_mut(id).grad.data_mut();
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not backed by a store parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Reads a parameter onto the tape. Repeated reads of the same parameter
    /// return the same leaf. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.by_id(id);
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.params.insert(id, v);
        v
    }

    pub fn param_named(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).unwrap()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.map(a, |x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Concatenates along columns; all inputs must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks inputs vertically; all inputs must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(parts[0]).to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if len == 0 || start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Row-wise `softmax(scale * x)`.
    pub fn softmax(&mut self, a: Var, scale: f64) -> Result<Var> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("softmax scale must be positive, got {scale}")));
        }
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(softmax_scaled(&t.data()[r * cols..(r + 1) * cols], scale));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a, scale), rg))
    }

    /// `-ln(max(probs[label], PROB_FLOOR))` for a single `1 x C` row.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let t = self.value(probs);
        if t.rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![1],
            });
        }
        if label >= t.cols() {
            return Err(Error::InvalidLabel {
                label,
                classes: t.cols(),
            });
        }
        let loss = -t.data()[label].max(PROB_FLOOR).ln();
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(probs, label), rg))
    }

    /// Elementwise sum of equally shaped inputs.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            self.same_shape("sum", parts[0], p)?;
            for (a, &b) in acc.data_mut().iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(acc, Op::Sum(parts.to_vec()), rg))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let s = self.sum(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    /// Backpropagates from a `1 x 1` output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(loss).to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = dC * B^T
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += dy[i * n + j] * tb.data()[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = A^T * dC
                self.accumulate(grads, *b, |gb| {
                    let at = ta.transpose();
                    matmul_into(at.data(), dy, gb, k, m, n);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += dy[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |g| add_into(g, dy));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(dy).zip(tb.data()) {
                        *g += d * y;
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(dy).zip(ta.data()) {
                        *g += d * x;
                    }
                });
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |g| {
                    for (g, &d) in g.iter_mut().zip(dy) {
                        *g += d * factor;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * (1.0 - y * y);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = (node.value.rows(), node.value.cols());
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accumulate(grads, p, |g| {
                        for r in 0..rows {
                            for c in 0..pc {
                                g[r * pc + c] += dy[r * cols + offset + c];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |g| add_into(g, &dy[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, len) = (node.value.rows(), node.value.cols());
                let cols = self.value(*a).cols();
                self.accumulate(grads, *a, |g| {
                    for r in 0..rows {
                        for c in 0..len {
                            g[r * cols + start + c] += dy[r * len + c];
                        }
                    }
                });
            }
            Op::Softmax(a, scale) => {
                let (rows, cols) = (node.value.rows(), node.value.cols());
                let y = node.value.data();
                self.accumulate(grads, *a, |g| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let dr = &dy[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            g[r * cols + c] += scale * yr[c] * (dr[c] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy(probs, label) => {
                let p = self.value(*probs).data()[*label];
                if p > PROB_FLOOR {
                    self.accumulate(grads, *probs, |g| g[*label] -= dy[0] / p);
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, |g| add_into(g, dy));
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
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
