//! Reverse-mode tape over dense matrices.
//!
//! Every primitive records its output value and the indices of its inputs.
//! [`Tape::backward`] walks the record in reverse execution order, accumulating
//! adjoints, and deposits parameter gradients into a [`ParamStore`] by name.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::graph::DirectedEdge;
use crate::linalg::{sigmoid, softplus, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param(String),
    Input,
    Constant,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Unary(Var, Activation),
    SoftmaxRows(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    Element(Var, usize, usize),
    GatherArcs(Var, Arc<[DirectedEdge]>),
    ScatterArcs(Var, Arc<[DirectedEdge]>),
    RowNormalize(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    constants: HashMap<&'static str, Var>,
    strict: bool,
    consumed: bool,
}

/// Adjoints of every recorded value after [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Gradient with respect to `var`; `None` if nothing flowed into it.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.adj.get(var.0).and_then(Option::as_ref)
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that fails with [`Error::NonFiniteDetected`] as soon as any
    /// primitive produces a NaN or infinity.
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Matrix, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.strict && !value.is_finite() {
            return Err(Error::NonFiniteDetected { op: op_name });
        }
        let requires_grad = match &op {
            Op::Param(_) | Op::Input => true,
            Op::Constant => false,
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRowBias(a, b)
            | Op::Hadamard(a, b)
            | Op::ScaleBy(a, b) => self.req(*a) || self.req(*b),
            Op::Scale(a, _)
            | Op::Unary(a, _)
            | Op::SoftmaxRows(a)
            | Op::SumAll(a)
            | Op::Element(a, _, _)
            | Op::GatherArcs(a, _)
            | Op::ScatterArcs(a, _)
            | Op::RowNormalize(a) => self.req(*a),
            Op::ConcatCols(vs) => vs.iter().any(|v| self.req(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records parameter `name` from `store`. Repeated requests for the same
    /// name return the same leaf, so its gradient accumulates.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push("param", value, Op::Param(name.to_string()))?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Differentiable input whose adjoint can be read back after backward.
    pub fn input(&mut self, value: Matrix) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    /// Constant recorded once per tape under `key`.
    pub fn constant_cached(
        &mut self,
        key: &'static str,
        make: impl FnOnce() -> Matrix,
    ) -> Result<Var> {
        if let Some(&v) = self.constants.get(key) {
            return Ok(v);
        }
        let v = self.constant(make())?;
        self.constants.insert(key, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let out = x.matmul_nt(y);
        self.push("matmul_nt", out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Adds the 1×cols row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: x.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, bb) in out.row_mut(i).iter_mut().zip(b.as_slice()) {
                *o += bb;
            }
        }
        self.push("add_row_bias", out, Op::AddRowBias(a, bias))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("hadamard", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("hadamard", out, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push("scale", out, Op::Scale(a, s))
    }

    /// Multiplies `a` by the 1×1 value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: self.value(a).shape(),
                rhs: sv.shape(),
            });
        }
        let k = sv[(0, 0)];
        let out = self.value(a).scale(k);
        self.push("scale_by", out, Op::ScaleBy(a, s))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let out = self.value(a).map(|x| act.apply(x));
        self.push("activation", out, Op::Unary(a, act))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Softplus)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                total += *r;
            }
            for r in row.iter_mut() {
                *r /= total;
            }
        }
        self.push("softmax", out, Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).sum());
        self.push("sum", out, Op::SumAll(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape(),
                    rhs: m.shape(),
                });
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Entry `(i, j)` of `a` as a 1×1 value.
    pub fn element(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let x = self.value(a);
        if i >= x.rows() || j >= x.cols() {
            return Err(Error::ShapeMismatch {
                op: "element",
                lhs: x.shape(),
                rhs: (i, j),
            });
        }
        let out = Matrix::scalar(x[(i, j)]);
        self.push("element", out, Op::Element(a, i, j))
    }

    /// For a node column `c` (n×1), builds the E×2 matrix whose row `e` is
    /// `[c[target_e], c[source_e]]`.
    pub fn gather_arcs(&mut self, c: Var, arcs: &Arc<[DirectedEdge]>) -> Result<Var> {
        let x = self.value(c);
        if x.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "gather_arcs",
                lhs: x.shape(),
                rhs: (arcs.len(), 2),
            });
        }
        let mut out = Matrix::zeros(arcs.len(), 2);
        for (e, arc) in arcs.iter().enumerate() {
            out[(e, 0)] = x[(arc.target, 0)];
            out[(e, 1)] = x[(arc.source, 0)];
        }
        self.push("gather_arcs", out, Op::GatherArcs(c, Arc::clone(arcs)))
    }

    /// Weighted aggregation of per-arc messages (E×k) into per-node rows:
    /// `out[target] += weight · msg[e]`.
    pub fn scatter_arcs(&mut self, msgs: Var, arcs: &Arc<[DirectedEdge]>, n: usize) -> Result<Var> {
        let m = self.value(msgs);
        if m.rows() != arcs.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_arcs",
                lhs: m.shape(),
                rhs: (arcs.len(), m.cols()),
            });
        }
        if let Some(bad) = arcs.iter().find(|a| a.target >= n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.target + 1,
            });
        }
        let k = m.cols();
        let mut out = Matrix::zeros(n, k);
        for (e, arc) in arcs.iter().enumerate() {
            let src = m.row(e);
            let dst = out.row_mut(arc.target);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += arc.weight * s;
            }
        }
        self.push("scatter_arcs", out, Op::ScatterArcs(msgs, Arc::clone(arcs)))
    }

    /// Divides each row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let s: f64 = row.iter().sum();
            for r in row.iter_mut() {
                *r /= s;
            }
        }
        self.push("row_normalize", out, Op::RowNormalize(a))
    }

    /// Propagates `seeds` (output, upstream adjoint) pairs backward through the
    /// record. Parameter gradients are added into `grads`; the returned
    /// [`Adjoints`] expose gradients of inputs. A tape can only be walked once.
    pub fn backward(
        &mut self,
        seeds: &[(Var, &Matrix)],
        grads: &mut ParamStore,
    ) -> Result<Adjoints> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for &(v, g) in seeds {
            check_same("backward seed", self.value(v), g)?;
            accumulate(&mut adj, v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &adj[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(name) => grads.accumulate(name, &g)?,
                Op::Input | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g.matmul_nt(self.value(*b)));
                    }
                    if self.req(*b) {
                        accumulate(&mut adj, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g.matmul(self.value(*b)));
                    }
                    if self.req(*b) {
                        accumulate(&mut adj, *b, g.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.req(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.req(*b) {
                        accumulate(&mut adj, *b, g.scale(-1.0));
                    }
                }
                Op::AddRowBias(a, b) => {
                    if self.req(*b) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, x) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        accumulate(&mut adj, *b, db);
                    }
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Hadamard(a, b) => {
                    if self.req(*a) {
                        accumulate(&mut adj, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.req(*b) {
                        accumulate(&mut adj, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::ScaleBy(a, s) => {
                    if self.req(*a) {
                        let k = self.value(*s)[(0, 0)];
                        accumulate(&mut adj, *a, g.scale(k));
                    }
                    if self.req(*s) {
                        let ds = crate::linalg::dot(g.as_slice(), self.value(*a).as_slice());
                        accumulate(&mut adj, *s, Matrix::scalar(ds));
                    }
                }
                Op::Unary(a, act) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = g;
                    for ((dv, &xv), &yv) in d
                        .as_mut_slice()
                        .iter_mut()
                        .zip(x.as_slice())
                        .zip(y.as_slice())
                    {
                        *dv *= act.derivative(xv, yv);
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = crate::linalg::dot(yr, gr);
                        for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SumAll(a) => {
                    let x = self.value(*a);
                    accumulate(&mut adj, *a, Matrix::filled(x.rows(), x.cols(), g[(0, 0)]));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        if self.req(*p) {
                            let mut d = Matrix::zeros(rows, cols);
                            for r in 0..rows {
                                d.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + cols]);
                            }
                            accumulate(&mut adj, *p, d);
                        }
                        offset += cols;
                    }
                }
                Op::Element(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    d[(*r, *c)] = g[(0, 0)];
                    accumulate(&mut adj, *a, d);
                }
                Op::GatherArcs(c, arcs) => {
                    let mut d = Matrix::zeros(self.value(*c).rows(), 1);
                    for (e, arc) in arcs.iter().enumerate() {
                        d[(arc.target, 0)] += g[(e, 0)];
                        d[(arc.source, 0)] += g[(e, 1)];
                    }
                    accumulate(&mut adj, *c, d);
                }
                Op::ScatterArcs(m, arcs) => {
                    let k = g.cols();
                    let mut d = Matrix::zeros(arcs.len(), k);
                    for (e, arc) in arcs.iter().enumerate() {
                        let src = g.row(arc.target);
                        for (dv, s) in d.row_mut(e).iter_mut().zip(src) {
                            *dv = arc.weight * s;
                        }
                    }
                    accumulate(&mut adj, *m, d);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let s: f64 = x.row(r).iter().sum();
                        let inner = crate::linalg::dot(g.row(r), y.row(r));
                        for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = (g[(r, j)] - inner) / s;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
            }
        }
        Ok(Adjoints { adj })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
