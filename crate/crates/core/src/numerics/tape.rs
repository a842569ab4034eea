//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every node holds a [`Matrix`]; vectors are `n x 1` columns. Nodes are
//! appended in evaluation order, so a reverse sweep over the arena is a valid
//! topological order and visits each node once.
//!
//! Leaves created with [`Tape::constant`] never receive gradient, which is how
//! frozen weights are expressed.

use super::dense::{log_softmax_slice, softmax_slice, Matrix, Vector};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    SumSquares(Var),
    Norm(Var),
    VStack(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`]. Nodes the loss does not depend on
/// report an all-zero matrix of their own shape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Matrix {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
            None => panic!("variable {} does not belong to this tape", v.0),
        }
    }

    /// True when the loss reached this node at all.
    pub fn touched(&self, v: Var) -> bool {
        matches!(self.grads.get(v.0), Some(Some(_)))
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("tape node {} ({op:?})", self.nodes.len())));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("variable {} is not on this tape", v.0)));
        }
        Ok(())
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: &Matrix) -> Var {
        self.nodes.push(Node { value: m.clone(), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Frozen leaf; its gradient is always zero.
    pub fn constant(&mut self, m: &Matrix) -> Var {
        self.nodes.push(Node { value: m.clone(), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param_vector(&mut self, v: &Vector) -> Var {
        self.param(&v.to_column())
    }

    pub fn constant_vector(&mut self, v: &Vector) -> Var {
        self.constant(&v.to_column())
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a column node as a [`Vector`].
    pub fn vector(&self, v: Var) -> Vector {
        self.nodes[v.0].value.as_column().expect("node is not a column")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = &self.nodes[v.0].value;
        assert_eq!(m.shape(), (1, 1), "node is not a scalar");
        m.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid!("sum of zero terms"))?;
        let mut value = self.value(*first).clone();
        for p in &parts[1..] {
            value.add_assign(self.value(*p))?;
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::Sum(parts.to_vec()), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `a * s` where `s` is a 1x1 node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(invalid!("mul_scalar expects a 1x1 factor"));
        }
        let value = self.value(a).scale(self.scalar(s));
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::MulScalar(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|x| x.tanh()).collect();
        let value = Matrix::from_parts(src.rows(), src.cols(), data);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    fn column_of(&self, a: Var, what: &str) -> Result<&Matrix> {
        let m = self.value(a);
        if m.cols() != 1 || m.rows() == 0 {
            return Err(invalid!("{what} expects a non-empty column, got {:?}", m.shape()));
        }
        Ok(m)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.column_of(a, "softmax")?;
        let value = Matrix::from_parts(m.rows(), 1, softmax_slice(m.data()));
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.column_of(a, "log_softmax")?;
        let value = Matrix::from_parts(m.rows(), 1, log_softmax_slice(m.data()));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Entry `index` of a column as a 1x1 node.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let m = self.column_of(a, "pick")?;
        if index >= m.rows() {
            return Err(invalid!("pick index {index} out of range {}", m.rows()));
        }
        let value = Matrix::from_parts(1, 1, vec![m.data()[index]]);
        let rg = self.rg(a);
        self.push(value, Op::Pick(a, index), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_parts(1, 1, vec![self.value(a).frobenius_sq()]);
        let rg = self.rg(a);
        self.push(value, Op::SumSquares(a), rg)
    }

    /// Euclidean (Frobenius) norm as a 1x1 node.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_parts(1, 1, vec![self.value(a).frobenius_sq().sqrt()]);
        let rg = self.rg(a);
        self.push(value, Op::Norm(a), rg)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Matrix::vstack(&mats)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::VStack(parts.to_vec()), rg)
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(bad) = rows.iter().find(|r| **r >= t.rows()) {
            return Err(invalid!("gather row {bad} out of range {}", t.rows()));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(t.row(*r));
        }
        let value = Matrix::from_vec(rows.len(), cols, data)?;
        let rg = self.rg(table);
        self.push(value, Op::GatherRows(table, rows.to_vec()), rg)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = Matrix::from_vec(rows, cols, self.value(a).data().to_vec())?;
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Reverse sweep from a 1x1 `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!("backward needs a scalar loss, got {:?}", self.value(loss).shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, g.clone())?;
                        }
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::MulScalar(a, s) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.scale(self.scalar(*s)))?;
                    }
                    if self.rg(*s) {
                        let d: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                        accumulate(&mut grads, *s, Matrix::from_vec(1, 1, vec![d])?)?;
                    }
                }
                Op::Tanh(a) => {
                    let data = g.data().iter().zip(node.value.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::Softmax(a) => {
                    let s = node.value.data();
                    let inner: f64 = g.data().iter().zip(s).map(|(x, y)| x * y).sum();
                    let data = g.data().iter().zip(s).map(|(gi, si)| si * (gi - inner)).collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(s.len(), 1, data)?)?;
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.data().iter().sum();
                    let data = g.data().iter().zip(node.value.data()).map(|(gi, li)| gi - li.exp() * total).collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), 1, data)?)?;
                }
                Op::Pick(a, index) => {
                    let mut ga = Matrix::zeros(self.value(*a).rows(), 1);
                    ga.data_mut()[*index] = g.data()[0];
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SumSquares(a) => {
                    let ga = self.value(*a).scale(2.0 * g.data()[0]);
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Norm(a) => {
                    // Subgradient zero at the origin.
                    let n = node.value.data()[0];
                    let (r, c) = self.value(*a).shape();
                    let ga = if n > 0.0 { self.value(*a).scale(g.data()[0] / n) } else { Matrix::zeros(r, c) };
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        if self.rg(*p) {
                            let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                            accumulate(&mut grads, *p, Matrix::from_vec(r, c, slice)?)?;
                        }
                        offset += r;
                    }
                }
                Op::GatherRows(table, rows) => {
                    let (tr, tc) = self.value(*table).shape();
                    let mut gt = Matrix::zeros(tr, tc);
                    for (k, r) in rows.iter().enumerate() {
                        for (dst, src) in gt.row_mut(*r).iter_mut().zip(g.row(k)) {
                            *dst += src;
                        }
                    }
                    accumulate(&mut grads, *table, gt)?;
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::from_vec(r, c, g.data().to_vec())?)?;
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        // Interior nodes had their gradient taken; only leaves are reported.
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
