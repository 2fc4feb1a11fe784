//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only arena of nodes built while the forward pass
//! runs (define-by-run). Nodes are only ever created after their parents, so
//! reverse creation order is a valid topological order for the backward pass.
//!
//! ```
//! use lcw::autodiff::Graph;
//! use lcw::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
//! let sq = g.square(x).unwrap();
//! let loss = g.sum(sq, None).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod batchnorm;
pub mod gradcheck;
mod optim;

pub use batchnorm::{BatchNormState, NormMode};
pub use optim::{clip_global_norm, AdamState};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{matmul_raw, pairwise_sq_dists_raw, transpose_raw, Tensor};

/// Handle to a node of a [`Graph`]: a differentiable value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Tanh,
    Sqrt,
    Reciprocal,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// How the two operands of a binary op line up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
    /// Lhs is a row vector repeated over the rows of rhs.
    LhsRow,
    RhsRow,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var, Bcast),
    Unary(UnaryOp, Var),
    Affine { x: Var, scale: f64 },
    Sum { x: Var, axis: Option<usize>, mean: bool },
    Transpose(Var),
    PairwiseSqDists(Var, Var),
    ClampMin { x: Var, min: f64 },
    SortColumns { x: Var, perm: Vec<usize> },
    BatchNorm(batchnorm::BnSaved),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An arena-backed computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `x` cut off from the graph (stop-gradient).
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Accumulated gradient, `None` if backward never reached the node.
    pub fn grad(&self, x: Var) -> Option<&Tensor> {
        self.nodes[x.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (bc, shape) = broadcast(va.shape(), vb.shape())?;
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let data: Vec<f64> = match bc {
            Bcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::LhsScalar => db.iter().map(|&y| f(da[0], y)).collect(),
            Bcast::RhsScalar => da.iter().map(|&x| f(x, db[0])).collect(),
            Bcast::LhsRow => {
                let m = da.len();
                (0..n).map(|i| f(da[i % m], db[i])).collect()
            }
            Bcast::RhsRow => {
                let m = db.len();
                (0..n).map(|i| f(da[i], db[i % m])).collect()
            }
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary(op, a, b, bc), rg))
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let v = self.value(x);
        match op {
            UnaryOp::Sqrt if v.data().iter().any(|&t| t < 0.0) => {
                return Err(Error::Domain("sqrt of negative input".into()))
            }
            UnaryOp::Log if v.data().iter().any(|&t| t <= 0.0) => {
                return Err(Error::Domain("log of non-positive input".into()))
            }
            UnaryOp::Reciprocal if v.data().contains(&0.0) => {
                return Err(Error::Domain("reciprocal of zero".into()))
            }
            _ => {}
        }
        let value = v.map(|t| match op {
            UnaryOp::Relu => {
                if t > 0.0 {
                    t
                } else {
                    0.0
                }
            }
            UnaryOp::Sigmoid => sigmoid(t),
            UnaryOp::Tanh => t.tanh(),
            UnaryOp::Sqrt => t.sqrt(),
            UnaryOp::Reciprocal => 1.0 / t,
            UnaryOp::Log => t.ln(),
            UnaryOp::Square => t * t,
        });
        let rg = self.rg(x);
        Ok(self.push(value, Op::Unary(op, x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Reciprocal, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    /// `scale · x + shift` with constant reals.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|t| scale * t + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, 1.0, c)
    }

    /// Sum over all elements (`axis = None`) or along one axis of a matrix.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let v = self.value(x);
        let value = match axis {
            None => {
                let s: f64 = v.data().iter().sum();
                Tensor::scalar(if mean { s / v.numel() as f64 } else { s })
            }
            Some(ax) => {
                let (r, c) = as_matrix(v.shape(), ax)?;
                let mut out;
                if ax == 0 {
                    out = vec![0.0; c];
                    for row in v.data().chunks_exact(c) {
                        for (o, &t) in out.iter_mut().zip(row) {
                            *o += t;
                        }
                    }
                    if mean {
                        out.iter_mut().for_each(|o| *o /= r as f64);
                    }
                } else {
                    out = v
                        .data()
                        .chunks_exact(c)
                        .map(|row| {
                            let s: f64 = row.iter().sum();
                            if mean {
                                s / c as f64
                            } else {
                                s
                            }
                        })
                        .collect();
                }
                if out.len() == 1 {
                    Tensor::scalar(out[0])
                } else {
                    Tensor::vector(out)
                }
            }
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Sum { x, axis, mean }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Matrix of squared Euclidean distances between the rows of `a` and `b`.
    pub fn pairwise_sq_dists(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.cols() {
            return shape_err(format!(
                "pairwise_sq_dists of {:?} and {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let (n, m, d) = (va.rows(), vb.rows(), va.cols());
        let data = pairwise_sq_dists_raw(va.data(), vb.data(), n, m, d);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::PairwiseSqDists(a, b), rg))
    }

    /// `max(x, min)` elementwise; no gradient flows where the clamp is active.
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        let value = self.value(x).map(|t| t.max(min));
        let rg = self.rg(x);
        self.push(value, Op::ClampMin { x, min }, rg)
    }

    /// Sorts every column of a matrix independently (ascending). The sorting
    /// permutation is fixed at forward time and reused by the backward pass.
    pub fn sort_columns(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return shape_err(format!("sort_columns of {:?}", v.shape()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut perm = vec![0usize; r * c];
        let mut out = vec![0.0; r * c];
        let mut idx: Vec<usize> = Vec::with_capacity(r);
        for j in 0..c {
            idx.clear();
            idx.extend(0..r);
            idx.sort_by(|&p, &q| v.data()[p * c + j].total_cmp(&v.data()[q * c + j]));
            for (rank, &src) in idx.iter().enumerate() {
                perm[rank * c + j] = src;
                out[rank * c + j] = v.data()[src * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::SortColumns { x, perm }, rg))
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulates `∂root/∂node` into the gradient of every node reachable
    /// from the scalar `root`. Calling it twice without [`Graph::zero_grad`]
    /// adds the gradients twice.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return shape_err(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    let bt = transpose_raw(vb.data(), k, m);
                    let da = matmul_raw(g.data(), &bt, n, m, k);
                    accumulate(adj, *a, Tensor::matrix(n, k, da)?);
                }
                if self.rg(*b) {
                    let at = transpose_raw(va.data(), n, k);
                    let db = matmul_raw(&at, g.data(), k, n, m);
                    accumulate(adj, *b, Tensor::matrix(k, m, db)?);
                }
            }
            Op::Binary(op, a, b, bc) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let local = match op {
                        BinaryOp::Add | BinaryOp::Sub => g.clone(),
                        BinaryOp::Mul => elementwise_with(g, vb, *bc, false),
                    };
                    accumulate(adj, *a, reduce_to(local, va.shape(), *bc, true)?);
                }
                if self.rg(*b) {
                    let local = match op {
                        BinaryOp::Add => g.clone(),
                        BinaryOp::Sub => g.map(|t| -t),
                        BinaryOp::Mul => elementwise_with(g, va, *bc, true),
                    };
                    accumulate(adj, *b, reduce_to(local, vb.shape(), *bc, false)?);
                }
            }
            Op::Unary(op, x) => {
                let vx = self.value(*x);
                let out = &node.value;
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .zip(out.data())
                    .map(|((&gi, &xi), &yi)| {
                        gi * match op {
                            UnaryOp::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Sigmoid => yi * (1.0 - yi),
                            UnaryOp::Tanh => 1.0 - yi * yi,
                            UnaryOp::Sqrt => 0.5 / yi,
                            UnaryOp::Reciprocal => -yi * yi,
                            UnaryOp::Log => 1.0 / xi,
                            UnaryOp::Square => 2.0 * xi,
                        }
                    })
                    .collect();
                accumulate(adj, *x, Tensor::new(vx.shape().to_vec(), d)?);
            }
            Op::Affine { x, scale } => {
                accumulate(adj, *x, g.map(|t| t * scale));
            }
            Op::Sum { x, axis, mean } => {
                let vx = self.value(*x);
                let total = vx.numel();
                let d: Vec<f64> = match axis {
                    None => {
                        let gv = g.data()[0];
                        let gv = if *mean { gv / total as f64 } else { gv };
                        vec![gv; total]
                    }
                    Some(ax) => {
                        let (r, c) = as_matrix(vx.shape(), *ax)?;
                        let mut d = vec![0.0; r * c];
                        for ii in 0..r {
                            for jj in 0..c {
                                d[ii * c + jj] = if *ax == 0 {
                                    g.data()[jj] / if *mean { r as f64 } else { 1.0 }
                                } else {
                                    g.data()[ii] / if *mean { c as f64 } else { 1.0 }
                                };
                            }
                        }
                        d
                    }
                };
                accumulate(adj, *x, Tensor::new(vx.shape().to_vec(), d)?);
            }
            Op::Transpose(x) => {
                accumulate(adj, *x, g.transpose()?);
            }
            Op::PairwiseSqDists(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, d) = (va.rows(), vb.rows(), va.cols());
                let gd = g.data();
                if self.rg(*a) {
                    // dA_i = 2 (Σ_j g_ij · a_i − Σ_j g_ij · b_j)
                    let gb = matmul_raw(gd, vb.data(), n, m, d);
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        let r: f64 = gd[i * m..(i + 1) * m].iter().sum();
                        for k in 0..d {
                            da[i * d + k] = 2.0 * (r * va.data()[i * d + k] - gb[i * d + k]);
                        }
                    }
                    accumulate(adj, *a, Tensor::matrix(n, d, da)?);
                }
                if self.rg(*b) {
                    let gt = transpose_raw(gd, n, m);
                    let ga = matmul_raw(&gt, va.data(), m, n, d);
                    let mut db = vec![0.0; m * d];
                    for j in 0..m {
                        let c: f64 = gt[j * n..(j + 1) * n].iter().sum();
                        for k in 0..d {
                            db[j * d + k] = 2.0 * (c * vb.data()[j * d + k] - ga[j * d + k]);
                        }
                    }
                    accumulate(adj, *b, Tensor::matrix(m, d, db)?);
                }
            }
            Op::ClampMin { x, min } => {
                let vx = self.value(*x);
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gi, &xi)| if xi > *min { gi } else { 0.0 })
                    .collect();
                accumulate(adj, *x, Tensor::new(vx.shape().to_vec(), d)?);
            }
            Op::SortColumns { x, perm } => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut d = vec![0.0; vx.numel()];
                for (pos, &src) in perm.iter().enumerate() {
                    let j = pos % c;
                    d[src * c + j] += g.data()[pos];
                }
                accumulate(adj, *x, Tensor::new(vx.shape().to_vec(), d)?);
            }
            Op::BatchNorm(saved) => {
                batchnorm::backward(self, saved, g, adj)?;
            }
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], x: Var, contribution: Tensor) {
    match &mut adj[x.0] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(contribution.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}

/// Treats `shape` as `r × c` for a reduction along `axis`.
fn as_matrix(shape: &[usize], axis: usize) -> Result<(usize, usize)> {
    match (shape.len(), axis) {
        (1, 0) => Ok((shape[0], 1)),
        (2, 0) | (2, 1) => Ok((shape[0], shape[1])),
        _ => shape_err(format!("axis {axis} invalid for shape {shape:?}")),
    }
}

fn is_scalar_shape(s: &[usize]) -> bool {
    s.iter().all(|&d| d == 1)
}

/// Row vector of length `m`: shape `[m]` or `[1, m]`.
fn row_len(s: &[usize]) -> Option<usize> {
    match s {
        [m] => Some(*m),
        [1, m] => Some(*m),
        _ => None,
    }
}

fn broadcast(a: &[usize], b: &[usize]) -> Result<(Bcast, Vec<usize>)> {
    if a == b {
        return Ok((Bcast::Same, a.to_vec()));
    }
    if is_scalar_shape(a) {
        return Ok((Bcast::LhsScalar, b.to_vec()));
    }
    if is_scalar_shape(b) {
        return Ok((Bcast::RhsScalar, a.to_vec()));
    }
    if let (Some(m), [_, mb]) = (row_len(a), b) {
        if m == *mb {
            return Ok((Bcast::LhsRow, b.to_vec()));
        }
    }
    if let ([_, ma], Some(m)) = (a, row_len(b)) {
        if m == *ma {
            return Ok((Bcast::RhsRow, a.to_vec()));
        }
    }
    shape_err(format!("cannot broadcast {a:?} with {b:?}"))
}

/// `g ⊙ other` where `other` is the operand that may be broadcast.
/// `other_is_lhs` says which side `other` came from.
fn elementwise_with(g: &Tensor, other: &Tensor, bc: Bcast, other_is_lhs: bool) -> Tensor {
    let od = other.data();
    let m = od.len();
    let broadcast_other = matches!(
        (bc, other_is_lhs),
        (Bcast::LhsScalar, true) | (Bcast::RhsScalar, false) | (Bcast::LhsRow, true) | (Bcast::RhsRow, false)
    );
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, &gi)| gi * if broadcast_other { od[i % m] } else { od[i] })
        .collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape as gradient")
}

/// Reduces an output-shaped gradient back to the operand's shape.
fn reduce_to(local: Tensor, shape: &[usize], bc: Bcast, is_lhs: bool) -> Result<Tensor> {
    let reduced = match (bc, is_lhs) {
        (Bcast::LhsScalar, true) | (Bcast::RhsScalar, false) => {
            Tensor::full(shape, local.data().iter().sum())
        }
        (Bcast::LhsRow, true) | (Bcast::RhsRow, false) => {
            let m = shape.iter().product();
            let mut out = vec![0.0; m];
            for row in local.data().chunks_exact(m) {
                for (o, &t) in out.iter_mut().zip(row) {
                    *o += t;
                }
            }
            Tensor::new(shape.to_vec(), out)?
        }
        _ => local,
    };
    Ok(reduced)
}
