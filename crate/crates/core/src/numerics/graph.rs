//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Graph`] records every operation as a node that remembers its parents.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep that
//! visits each node once, summing contributions into parents. Shared
//! subexpressions therefore accumulate gradients naturally.
//!
//! Broadcasting is limited to a `1 × cols` right operand for `add`, `sub`
//! and `mul`, plus the per-row column scaling of [`Graph::mul_col`].

use super::Tensor2;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sum(Var),
    MeanRows(Var),
    SquaredNormRows(Var),
    PairwiseSqDist(Var),
    SqrtEps(Var),
    Powf(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<(usize, usize)>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor2>,
}

/// Tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor2, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor2, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor2> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor2> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (rows, cols) = ta.shape();
        if tb.cols() != cols || (tb.rows() != rows && tb.rows() != 1) {
            return Err(shape_err(name, ta, tb));
        }
        let mut out = Tensor2::zeros(rows, cols);
        let row_broadcast = tb.rows() == 1 && rows != 1;
        for r in 0..rows {
            let br = if row_broadcast { tb.row(0) } else { tb.row(r) };
            for ((o, x), y) in out.row_mut(r).iter_mut().zip(ta.row(r)).zip(br) {
                *o = f(*x, *y);
            }
        }
        Ok(out)
    }

    /// Elementwise `a + b`; `b` may be a `1 × cols` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise `a - b` with the same broadcasting as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product with the same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Scales row `i` of `x` by `s[i]`, where `s` is `rows × 1`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.shape() != (tx.rows(), 1) {
            return Err(shape_err("mul_col", tx, ts));
        }
        let mut value = tx.clone();
        for r in 0..tx.rows() {
            let k = ts.data()[r];
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push(value, Op::MulCol(x, s), &[x, s]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v + k);
        self.push(value, Op::AddScalar(a), &[a])
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor2::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Mean over rows (per column), giving `1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows().max(1) as f64;
        let value = t.column_sums().map(|v| v / n);
        self.push(value, Op::MeanRows(a), &[a])
    }

    /// Squared euclidean norm of each row, giving `rows × 1`.
    pub fn squared_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let norms: Vec<f64> = (0..t.rows())
            .map(|r| t.row(r).iter().map(|v| v * v).sum())
            .collect();
        let value = Tensor2::column(&norms);
        self.push(value, Op::SquaredNormRows(a), &[a])
    }

    /// Matrix of squared euclidean distances between all row pairs.
    ///
    /// Computed from explicit differences, so the diagonal is exactly zero
    /// and the result exactly symmetric.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows();
        let mut value = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = t
                    .row(i)
                    .iter()
                    .zip(t.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                value.set(i, j, d);
                value.set(j, i, d);
            }
        }
        self.push(value, Op::PairwiseSqDist(a), &[a])
    }

    /// `sqrt(x + eps)`, differentiable at `x = 0`.
    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).map(|v| (v + eps).sqrt());
        self.push(value, Op::SqrtEps(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|v| v.powf(p));
        self.push(value, Op::Powf(a, p), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Numerically stable `log(softmax(x))` per row.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: t.shape(),
                right: (bad, 0),
            });
        }
        let value = t.gather_rows(indices);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// Picks individual entries `(row, col)` into a `k × 1` column.
    pub fn gather_elems(&mut self, a: Var, positions: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let mut vals = Vec::with_capacity(positions.len());
        for &(r, c) in positions {
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::Shape {
                    op: "gather_elems",
                    left: t.shape(),
                    right: (r, c),
                });
            }
            vals.push(t.get(r, c));
        }
        let value = Tensor2::column(&vals);
        Ok(self.push(value, Op::GatherElems(a, positions.to_vec()), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Ok(self.constant(Tensor2::zeros(0, 0)));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor2::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// Backpropagates from a `1 × 1` output node.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        self.nodes[out.0].grad = Some(Tensor2::scalar(1.0));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            for (parent, contrib) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                let slot = &mut self.nodes[parent.0].grad;
                match slot {
                    Some(acc) => acc.add_assign(&contrib),
                    None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor2) -> Vec<(Var, Tensor2)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = g.matmul(&tb.transpose()).expect("matmul grad shape");
                let db = ta.transpose().matmul(g).expect("matmul grad shape");
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, reduce_to(g, self.value(*b)))],
            Op::Sub(a, b) => {
                let db = reduce_to(g, self.value(*b)).map(|v| -v);
                vec![(*a, g.clone()), (*b, db)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let broadcast = tb.rows() == 1 && ta.rows() != 1;
                let mut da = g.clone();
                let mut gb = g.clone();
                for r in 0..g.rows() {
                    let br = if broadcast { tb.row(0) } else { tb.row(r) };
                    for (c, (x, y)) in ta.row(r).iter().zip(br).enumerate() {
                        da.row_mut(r)[c] *= y;
                        gb.row_mut(r)[c] *= x;
                    }
                }
                vec![(*a, da), (*b, reduce_to(&gb, tb))]
            }
            Op::MulCol(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let mut dx = g.clone();
                let mut ds = Vec::with_capacity(tx.rows());
                for (r, &k) in ts.data().iter().enumerate() {
                    dx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    ds.push(g.row(r).iter().zip(tx.row(r)).map(|(a, b)| a * b).sum());
                }
                vec![(*x, dx), (*s, Tensor2::column(&ds))]
            }
            Op::Scale(a, k) => vec![(*a, g.map(|v| v * k))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => {
                let ta = self.value(*a);
                let mut d = g.clone();
                for (dv, x) in d.data_mut().iter_mut().zip(ta.data()) {
                    if *x <= 0.0 {
                        *dv = 0.0;
                    }
                }
                vec![(*a, d)]
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(*a, Tensor2::filled(r, c, g.data()[0]))]
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).shape();
                let n = r.max(1) as f64;
                let mut d = Tensor2::zeros(r, c);
                for row in 0..r {
                    for (dv, gv) in d.row_mut(row).iter_mut().zip(g.row(0)) {
                        *dv = gv / n;
                    }
                }
                vec![(*a, d)]
            }
            Op::SquaredNormRows(a) => {
                let ta = self.value(*a);
                let mut d = ta.map(|v| 2.0 * v);
                for r in 0..ta.rows() {
                    let k = g.data()[r];
                    d.row_mut(r).iter_mut().for_each(|v| *v *= k);
                }
                vec![(*a, d)]
            }
            Op::PairwiseSqDist(a) => {
                let ta = self.value(*a);
                let (n, dim) = ta.shape();
                let mut d = Tensor2::zeros(n, dim);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g.get(i, j) + g.get(j, i));
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..dim {
                            let diff = ta.get(i, c) - ta.get(j, c);
                            d.row_mut(i)[c] += w * diff;
                        }
                    }
                }
                vec![(*a, d)]
            }
            Op::SqrtEps(a) => {
                let mut d = g.clone();
                for (dv, y) in d.data_mut().iter_mut().zip(out.data()) {
                    *dv /= 2.0 * y;
                }
                vec![(*a, d)]
            }
            Op::Powf(a, p) => {
                let ta = self.value(*a);
                let mut d = g.clone();
                for (dv, x) in d.data_mut().iter_mut().zip(ta.data()) {
                    *dv *= p * x.powf(p - 1.0);
                }
                vec![(*a, d)]
            }
            Op::SoftmaxRows(a) => {
                let mut d = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dot: f64 = g.row(r).iter().zip(y).map(|(a, b)| a * b).sum();
                    for (dv, yv) in d.row_mut(r).iter_mut().zip(y) {
                        *dv = yv * (*dv - dot);
                    }
                }
                vec![(*a, d)]
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for r in 0..out.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for (dv, ly) in d.row_mut(r).iter_mut().zip(out.row(r)) {
                        *dv -= ly.exp() * gsum;
                    }
                }
                vec![(*a, d)]
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                let mut d = g.clone();
                for (dv, x) in d.data_mut().iter_mut().zip(ta.data()) {
                    *dv /= x;
                }
                vec![(*a, d)]
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Tensor2::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (dv, gv) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *dv += gv;
                    }
                }
                vec![(*a, d)]
            }
            Op::GatherElems(a, pos) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Tensor2::zeros(r, c);
                for (k, &(pr, pc)) in pos.iter().enumerate() {
                    let v = d.get(pr, pc) + g.data()[k];
                    d.set(pr, pc, v);
                }
                vec![(*a, d)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let rows = self.value(p).rows();
                        let idx: Vec<usize> = (offset..offset + rows).collect();
                        offset += rows;
                        (p, g.gather_rows(&idx))
                    })
                    .collect()
            }
        }
    }
}

fn softmax(t: &Tensor2) -> Tensor2 {
    let mut value = t.clone();
    for r in 0..t.rows() {
        let row = value.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    value
}

/// Sums a gradient down to the shape of a (possibly row-broadcast) operand.
fn reduce_to(g: &Tensor2, target: &Tensor2) -> Tensor2 {
    if g.shape() == target.shape() {
        g.clone()
    } else {
        g.column_sums()
    }
}
