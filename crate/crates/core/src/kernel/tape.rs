//! Reverse-mode gradient tape over dense matrices.
//!
//! Each primitive pushes a node holding its output and whatever it needs for
//! the chain rule. [`Tape::backward`] consumes the tape and visits the nodes
//! once, newest first, accumulating parameter gradients into a [`Gradients`]
//! buffer laid out like the [`ParamStore`] the tape reads from.

use std::sync::Arc;

use rand::Rng;

use super::{Gradients, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::graph::NodeAdjacency;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Largest double below one; sigmoid outputs are clamped into
/// `[f64 smallest subnormal, SIGMOID_MAX]` so probabilities stay in (0, 1).
pub const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
pub const SIGMOID_MIN: f64 = f64::from_bits(1);

pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_MIN, SIGMOID_MAX)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: ParamId,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        ids: Vec<usize>,
    },
    StackRows(Var, Var),
    Affine {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
    },
    Relu(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    ConcatCols(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    ScaleOnePlus {
        x: Var,
        eps: ParamId,
    },
    NeighborSum {
        x: Var,
        adj: Arc<NodeAdjacency>,
    },
    Sum(Var),
    BceMean {
        logits: Var,
        labels: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    training: bool,
}

impl<'a> Tape<'a> {
    /// Training-mode tape: dropout is active.
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            training: true,
        }
    }

    /// Inference-mode tape: dropout is the identity.
    pub fn inference(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            training: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A whole parameter as a differentiable input.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    pub fn gather_rows(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.store.value(table);
        let out = select(t, ids)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Row selection from an intermediate value.
    pub fn select_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let out = select(self.value(x), ids)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `a` on top of `b`.
    pub fn stack_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(Error::contract(format!("stack_rows: {ca} vs {cb} columns")));
        }
        let mut data = self.value(a).as_slice().to_vec();
        data.extend_from_slice(self.value(b).as_slice());
        let out = Matrix::from_vec(ra + rb, ca, data)?;
        Ok(self.push(out, Op::StackRows(a, b)))
    }

    /// `x · W + b`, bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.store.value(w);
        if xv.cols() != wv.rows() {
            return Err(Error::contract(format!(
                "affine: input {:?} against weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let mut out = xv.matmul(wv);
        if let Some(b) = b {
            let bv = self.store.value(b);
            if bv.len() != wv.cols() {
                return Err(Error::contract(format!(
                    "affine: bias of {} values for {} outputs",
                    bv.len(),
                    wv.cols()
                )));
            }
            for r in 0..out.rows() {
                for (o, bias) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                    *o += bias;
                }
            }
        }
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`. Identity in
    /// inference mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(a, m)| a * m)
            .collect();
        let out = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::contract(format!("concat_cols: {ra} vs {rb} rows")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let out = Matrix::from_vec(ra, ca + cb, data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x + y)
            .map(|m| self.push(m, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x * y)
            .map(|m| self.push(m, Op::Mul(a, b)))
    }

    fn elementwise(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::contract(format!(
                "elementwise: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    /// `(1 + ε) · x` for a scalar parameter ε.
    pub fn scale_one_plus(&mut self, x: Var, eps: ParamId) -> Result<Var> {
        let e = self.store.value(eps);
        if e.len() != 1 {
            return Err(Error::contract("scale_one_plus: epsilon must be a scalar"));
        }
        let factor = 1.0 + e.as_slice()[0];
        let out = self.value(x).map(|v| factor * v);
        Ok(self.push(out, Op::ScaleOnePlus { x, eps }))
    }

    /// `out[v] = Σ_{u ∈ N(v)} w(v, u) · x[u]`.
    pub fn neighbor_sum(&mut self, x: Var, adj: &Arc<NodeAdjacency>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != adj.num_nodes() {
            return Err(Error::contract(format!(
                "neighbor_sum: {} feature rows for {} nodes",
                xv.rows(),
                adj.num_nodes()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for v in 0..adj.num_nodes() {
            let acc = out.row_mut(v);
            for (&u, &w) in adj.neighbors(v).iter().zip(adj.weights(v)) {
                for (o, &h) in acc.iter_mut().zip(xv.row(u)) {
                    *o += w * h;
                }
            }
        }
        Ok(self.push(
            out,
            Op::NeighborSum {
                x,
                adj: Arc::clone(adj),
            },
        ))
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(x))
    }

    /// Mean binary cross-entropy of `σ(logits)` against 0/1 labels, via the
    /// softplus form so saturated logits stay finite.
    pub fn bce_mean(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != labels.len() {
            return Err(Error::contract(format!(
                "bce_mean: logits {:?} for {} labels",
                z.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::contract("bce_mean: empty batch"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::contract("bce_mean: labels must be 0 or 1"));
        }
        let total: f64 = z
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| y * softplus(-z) + (1.0 - y) * softplus(z))
            .sum();
        let out = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            out,
            Op::BceMean {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Runs the chain rule from a 1×1 `loss` back to every parameter.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract("backward: loss must be 1x1"));
        }
        let mut param_grads = Gradients::zeros_like(self.store);
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        let nodes = self.nodes;
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => param_grads.get_mut(*id).add_assign(&dy),
                Op::Gather { table, ids } => {
                    scatter_add(param_grads.get_mut(*table), ids, &dy);
                }
                Op::SelectRows { x, ids } => {
                    let (r, c) = nodes[x.0].value.shape();
                    let g = slot(&mut grads, *x, r, c);
                    scatter_add(g, ids, &dy);
                }
                Op::StackRows(a, b) => {
                    let (ra, c) = nodes[a.0].value.shape();
                    let split = ra * c;
                    let (top, bottom) = dy.as_slice().split_at(split);
                    accumulate(&mut grads, *a, Matrix::from_vec(ra, c, top.to_vec())?);
                    let rb = nodes[b.0].value.rows();
                    accumulate(&mut grads, *b, Matrix::from_vec(rb, c, bottom.to_vec())?);
                }
                Op::Affine { x, w, b } => {
                    let xv = &nodes[x.0].value;
                    let wv = self.store.value(*w);
                    param_grads.get_mut(*w).add_assign(&xv.t_matmul(&dy));
                    if let Some(b) = b {
                        let gb = param_grads.get_mut(*b);
                        for r in 0..dy.rows() {
                            for (g, d) in gb.as_mut_slice().iter_mut().zip(dy.row(r)) {
                                *g += d;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dy.matmul_t(wv));
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    let mut dx = dy;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy;
                    for (d, &s) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = dy;
                    for (d, m) in dx.as_mut_slice().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a.0].value.cols();
                    let cb = nodes[b.0].value.cols();
                    let rows = dy.rows();
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let (left, right) = dy.row(r).split_at(ca);
                        da.extend_from_slice(left);
                        db.extend_from_slice(right);
                    }
                    accumulate(&mut grads, *a, Matrix::from_vec(rows, ca, da)?);
                    accumulate(&mut grads, *b, Matrix::from_vec(rows, cb, db)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let mut da = dy.clone();
                    for (d, &v) in da.as_mut_slice().iter_mut().zip(bv.as_slice()) {
                        *d *= v;
                    }
                    let mut db = dy;
                    for (d, &v) in db.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        *d *= v;
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ScaleOnePlus { x, eps } => {
                    let xv = &nodes[x.0].value;
                    let de: f64 = xv
                        .as_slice()
                        .iter()
                        .zip(dy.as_slice())
                        .map(|(a, b)| a * b)
                        .sum();
                    param_grads.get_mut(*eps).as_mut_slice()[0] += de;
                    let factor = 1.0 + self.store.value(*eps).as_slice()[0];
                    accumulate(&mut grads, *x, dy.map(|d| factor * d));
                }
                Op::NeighborSum { x, adj } => {
                    let (r, c) = nodes[x.0].value.shape();
                    let g = slot(&mut grads, *x, r, c);
                    for v in 0..adj.num_nodes() {
                        let dv = dy.row(v);
                        for (&u, &w) in adj.neighbors(v).iter().zip(adj.weights(v)) {
                            for (o, &d) in g.row_mut(u).iter_mut().zip(dv) {
                                *o += w * d;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = nodes[x.0].value.shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, dy.as_slice()[0]));
                }
                Op::BceMean { logits, labels } => {
                    let z = &nodes[logits.0].value;
                    let scale = dy.as_slice()[0] / labels.len() as f64;
                    let data = z
                        .as_slice()
                        .iter()
                        .zip(labels)
                        .map(|(&z, &y)| scale * (sigmoid(z) - y))
                        .collect();
                    accumulate(&mut grads, *logits, Matrix::from_vec(z.rows(), 1, data)?);
                }
            }
        }
        Ok(param_grads)
    }
}

fn select(table: &Matrix, ids: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(ids.len() * table.cols());
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::contract(format!(
                "row {id} out of range for {} rows",
                table.rows()
            )));
        }
        data.extend_from_slice(table.row(id));
    }
    Matrix::from_vec(ids.len(), table.cols(), data)
}

fn scatter_add(target: &mut Matrix, ids: &[usize], dy: &Matrix) {
    for (r, &id) in ids.iter().enumerate() {
        for (g, d) in target.row_mut(id).iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        empty => *empty = Some(g),
    }
}
