//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so parents always precede children and a
//! single reverse sweep from the loss visits everything in topological order.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

use super::sparse::{EdgeIndex, SparseAdj};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Spmm(Rc<SparseAdj>, usize),
    EdgeSpmm { index: Rc<EdgeIndex>, weights: usize, x: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScaleBy(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize, f64),
    Sqrt(usize),
    Recip(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    SegmentSoftmax { x: usize, segments: Rc<[usize]> },
    CosineRows(usize, usize),
    L2NormRows(usize),
    Mask(usize, Rc<Array2<f64>>),
    GatherRows(usize, Rc<[usize]>),
    Entries(usize, Rc<[(usize, usize)]>),
    Sum(usize),
    CenterCols(usize),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | ScaleBy(a, b) | CosineRows(a, b) => {
                [Some(a), Some(b)]
            }
            EdgeSpmm { weights, x, .. } => [Some(weights), Some(x)],
            Spmm(_, a)
            | Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | LeakyRelu(a, _)
            | Exp(a)
            | Log(a, _)
            | Sqrt(a)
            | Recip(a)
            | SoftmaxRows(a)
            | LogSoftmaxRows(a)
            | SegmentSoftmax { x: a, .. }
            | L2NormRows(a)
            | Mask(a, _)
            | GatherRows(a, _)
            | Entries(a, _)
            | Sum(a)
            | CenterCols(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// The computation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Array2<f64>>>>,
}

/// Handle to a matrix recorded on a [`Tape`].
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

fn shape_of(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            op,
            left: shape_of(a),
            right: shape_of(b),
        });
    }
    Ok(())
}

fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
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

    fn push(&self, value: Array2<f64>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().flatten().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Record an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Array2<f64>, requires_grad: bool) -> Var<'_> {
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

    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// `A·X` with constant sparse `A`.
    pub fn spmm<'t>(&'t self, adj: &Rc<SparseAdj>, x: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            if adj.num_nodes() != xv.nrows() {
                return Err(Error::Dimension {
                    op: "spmm",
                    left: (adj.num_nodes(), adj.num_nodes()),
                    right: shape_of(xv),
                });
            }
            adj.matmul_dense(xv)
        };
        Ok(self.push(out, Op::Spmm(Rc::clone(adj), x.id)))
    }

    /// `out[row_e] += w_e · x[col_e]` with differentiable per-edge weights
    /// (an `E×1` column).
    pub fn edge_spmm<'t>(
        &'t self,
        index: &Rc<EdgeIndex>,
        weights: Var<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.nodes.borrow();
            let w = &nodes[weights.id].value;
            let xv = &nodes[x.id].value;
            if w.dim() != (index.len(), 1) {
                return Err(Error::Dimension {
                    op: "edge_spmm weights",
                    left: (index.len(), 1),
                    right: shape_of(w),
                });
            }
            if xv.nrows() != index.num_nodes() {
                return Err(Error::Dimension {
                    op: "edge_spmm",
                    left: (index.num_nodes(), index.num_nodes()),
                    right: shape_of(xv),
                });
            }
            let mut out = Array2::zeros((index.num_nodes(), xv.ncols()));
            for (e, (r, c)) in index.iter().enumerate() {
                out.row_mut(r).scaled_add(w[(e, 0)], &xv.row(c));
            }
            out
        };
        Ok(self.push(
            out,
            Op::EdgeSpmm {
                index: Rc::clone(index),
                weights: weights.id,
                x: x.id,
            },
        ))
    }

    /// Softmax of an `E×1` score column within groups given by
    /// `segments[e]`. Empty groups produce nothing.
    pub fn segment_softmax<'t>(&'t self, scores: Var<'t>, segments: &Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.nodes.borrow();
            let s = &nodes[scores.id].value;
            if s.dim() != (segments.len(), 1) {
                return Err(Error::Dimension {
                    op: "segment_softmax",
                    left: (segments.len(), 1),
                    right: shape_of(s),
                });
            }
            let groups = group_by_segment(segments);
            let mut out = Array2::zeros(s.dim());
            for members in groups.iter().filter(|m| !m.is_empty()) {
                let xs: Vec<f64> = members.iter().map(|&e| s[(e, 0)]).collect();
                for (&e, p) in members.iter().zip(softmax_slice(&xs)) {
                    out[(e, 0)] = p;
                }
            }
            out
        };
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                x: scores.id,
                segments: Rc::clone(segments),
            },
        ))
    }

    /// Reverse sweep from a `1×1` loss. Gradients are retrievable with
    /// [`Tape::grad`] until the next call.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if nodes[id].requires_grad {
                backprop_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Accumulated gradient of `v`; zeros when `v` was not reached.
    pub fn grad(&self, v: Var<'_>) -> Array2<f64> {
        let grads = self.grads.borrow();
        match grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) if self.nodes.borrow()[v.id].requires_grad => g.clone(),
            _ => Array2::zeros(v.shape()),
        }
    }
}

fn group_by_segment(segments: &[usize]) -> Vec<Vec<usize>> {
    let n = segments.iter().map(|&s| s + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n];
    for (e, &s) in segments.iter().enumerate() {
        groups[s].push(e);
    }
    groups
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Array2<f64>>], id: usize, contribution: Array2<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => *g += &contribution,
        slot => *slot = Some(contribution),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if wants(*a) {
                accumulate(nodes, grads, *a, g.dot(&val(*b).t()));
            }
            if wants(*b) {
                accumulate(nodes, grads, *b, val(*a).t().dot(g));
            }
        }
        Op::Spmm(adj, x) => accumulate(nodes, grads, *x, adj.transpose_matmul_dense(g)),
        Op::EdgeSpmm { index, weights, x } => {
            let w = val(*weights);
            let xv = val(*x);
            if wants(*weights) {
                let mut dw = Array2::zeros(w.dim());
                for (e, (r, c)) in index.iter().enumerate() {
                    dw[(e, 0)] = g.row(r).dot(&xv.row(c));
                }
                accumulate(nodes, grads, *weights, dw);
            }
            if wants(*x) {
                let mut dx = Array2::zeros(xv.dim());
                for (e, (r, c)) in index.iter().enumerate() {
                    dx.row_mut(c).scaled_add(w[(e, 0)], &g.row(r));
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, -g);
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                accumulate(nodes, grads, *a, g * val(*b));
            }
            if wants(*b) {
                accumulate(nodes, grads, *b, g * val(*a));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g * *c),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::ScaleBy(a, s) => {
            let sv = val(*s)[(0, 0)];
            if wants(*a) {
                accumulate(nodes, grads, *a, g * sv);
            }
            if wants(*s) {
                let ds = (g * val(*a)).sum();
                accumulate(nodes, grads, *s, Array2::from_elem((1, 1), ds));
            }
        }
        Op::Relu(a) => {
            let d = Zip::from(g).and(val(*a)).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::LeakyRelu(a, slope) => {
            let d = Zip::from(g)
                .and(val(*a))
                .map_collect(|&g, &x| if x > 0.0 { g } else { slope * g });
            accumulate(nodes, grads, *a, d);
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, g * out),
        Op::Log(a, floor) => {
            let d = Zip::from(g)
                .and(val(*a))
                .map_collect(|&g, &x| if x > *floor { g / x } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::Sqrt(a) => {
            let d = Zip::from(g)
                .and(out)
                .map_collect(|&g, &y| if y > 0.0 { 0.5 * g / y } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::Recip(a) => {
            let d = Zip::from(g).and(out).map_collect(|&g, &y| -g * y * y);
            accumulate(nodes, grads, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let mut d = g * out;
            let dots = d.sum_axis(Axis(1));
            Zip::from(d.rows_mut())
                .and(out.rows())
                .and(&dots)
                .for_each(|mut row, y, &dot| row.scaled_add(-dot, &y));
            accumulate(nodes, grads, *a, d);
        }
        Op::LogSoftmaxRows(a) => {
            let mut d = g.clone();
            let sums = g.sum_axis(Axis(1));
            Zip::from(d.rows_mut())
                .and(out.rows())
                .and(&sums)
                .for_each(|mut row, y, &sum| {
                    Zip::from(&mut row).and(&y).for_each(|d, &y| *d -= sum * y.exp());
                });
            accumulate(nodes, grads, *a, d);
        }
        Op::SegmentSoftmax { x, segments } => {
            let mut d = Array2::zeros(out.dim());
            for members in group_by_segment(segments) {
                let dot: f64 = members.iter().map(|&e| g[(e, 0)] * out[(e, 0)]).sum();
                for e in members {
                    d[(e, 0)] = out[(e, 0)] * (g[(e, 0)] - dot);
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::CosineRows(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let mut da = Array2::zeros(av.dim());
            let mut db = Array2::zeros(bv.dim());
            for i in 0..av.nrows() {
                let (ra, rb) = (av.row(i), bv.row(i));
                let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                if na == 0.0 || nb == 0.0 {
                    continue;
                }
                let (gi, c) = (g[(i, 0)], out[(i, 0)]);
                let mut ga = da.row_mut(i);
                ga.scaled_add(gi / (na * nb), &rb);
                ga.scaled_add(-gi * c / (na * na), &ra);
                let mut gb = db.row_mut(i);
                gb.scaled_add(gi / (na * nb), &ra);
                gb.scaled_add(-gi * c / (nb * nb), &rb);
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
        Op::L2NormRows(a) => {
            let av = val(*a);
            let mut d = Array2::zeros(av.dim());
            for i in 0..av.nrows() {
                let n = out[(i, 0)];
                if n > 0.0 {
                    d.row_mut(i).scaled_add(g[(i, 0)] / n, &av.row(i));
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Mask(a, m) => accumulate(nodes, grads, *a, g * &**m),
        Op::GatherRows(a, idx) => {
            let mut d = Array2::zeros(val(*a).dim());
            for (k, &r) in idx.iter().enumerate() {
                d.row_mut(r).scaled_add(1.0, &g.row(k));
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Entries(a, idx) => {
            let mut d = Array2::zeros(val(*a).dim());
            for (k, &(r, c)) in idx.iter().enumerate() {
                d[(r, c)] += g[(k, 0)];
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, Array2::from_elem(val(*a).dim(), g[(0, 0)])),
        Op::CenterCols(a) => {
            let mean = g.mean_axis(Axis(0)).expect("nonempty");
            accumulate(nodes, grads, *a, g - &mean);
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        shape_of(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// Value of a `1×1` variable.
    pub fn item(&self) -> f64 {
        self.with_value(|v| {
            debug_assert_eq!(v.dim(), (1, 1));
            v[(0, 0)]
        })
    }

    pub fn grad(&self) -> Array2<f64> {
        self.tape.grad(*self)
    }

    fn unary(self, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var<'t> {
        let out = self.with_value(f);
        self.tape.push(out, op)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            same_shape(name, a, b)?;
            f(a, b)
        };
        Ok(self.tape.push(out, op))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.ncols() != b.nrows() {
                return Err(Error::Dimension {
                    op: "matmul",
                    left: shape_of(a),
                    right: shape_of(b),
                });
            }
            a.dot(b)
        };
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Element-wise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| a * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a + c)
    }

    /// Multiply every entry by the `1×1` variable `s`.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let sv = &nodes[s.id].value;
            if sv.dim() != (1, 1) {
                return Err(Error::Dimension {
                    op: "scale_by",
                    left: (1, 1),
                    right: shape_of(sv),
                });
            }
            &nodes[self.id].value * sv[(0, 0)]
        };
        Ok(self.tape.push(out, Op::ScaleBy(self.id, s.id)))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.mapv(|x| x.max(0.0)))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| {
            a.mapv(|x| if x > 0.0 { x } else { slope * x })
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.log_clamped(0.0)
    }

    /// `ln(max(x, floor))`; no gradient flows where the clamp is active.
    pub fn log_clamped(self, floor: f64) -> Var<'t> {
        self.unary(Op::Log(self.id, floor), |a| a.mapv(|x| x.max(floor).ln()))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |a| a.mapv(f64::sqrt))
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id), |a| a.mapv(f64::recip))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let p = softmax_slice(row.as_slice().expect("standard layout"));
                row.assign(&ndarray::ArrayView1::from(&p));
            }
            out
        })
    }

    /// Row-wise `ln softmax`, finite for any finite input.
    pub fn log_softmax_rows(self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |a| {
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_total = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                row.mapv_inplace(|x| x - max - log_total);
            }
            out
        })
    }

    /// Row-wise cosine similarity as an `n×1` column. Rows with zero norm
    /// give 0 and pass no gradient.
    pub fn cosine_rows(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "cosine_rows", Op::CosineRows(self.id, other.id), |a, b| {
            let mut out = Array2::zeros((a.nrows(), 1));
            for i in 0..a.nrows() {
                let (ra, rb) = (a.row(i), b.row(i));
                let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                if na > 0.0 && nb > 0.0 {
                    out[(i, 0)] = ra.dot(&rb) / (na * nb);
                }
            }
            out
        })
    }

    pub fn l2_norm_rows(self) -> Var<'t> {
        self.unary(Op::L2NormRows(self.id), |a| {
            let mut out = Array2::zeros((a.nrows(), 1));
            for (i, row) in a.rows().into_iter().enumerate() {
                out[(i, 0)] = row.dot(&row).sqrt();
            }
            out
        })
    }

    /// Element-wise product with a constant mask.
    pub fn mask(self, mask: &Rc<Array2<f64>>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            same_shape("mask", a, mask)?;
            a * &**mask
        };
        Ok(self.tape.push(out, Op::Mask(self.id, Rc::clone(mask))))
    }

    pub fn gather_rows(self, idx: &Rc<[usize]>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            if let Some(&bad) = idx.iter().find(|&&r| r >= a.nrows()) {
                return Err(Error::Data(format!("row {bad} out of range for {} rows", a.nrows())));
            }
            a.select(Axis(0), idx)
        };
        Ok(self.tape.push(out, Op::GatherRows(self.id, Rc::clone(idx))))
    }

    /// Pick the listed `(row, col)` entries into a `k×1` column.
    pub fn entries(self, idx: &Rc<[(usize, usize)]>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let mut out = Array2::zeros((idx.len(), 1));
            for (k, &(r, c)) in idx.iter().enumerate() {
                if r >= a.nrows() || c >= a.ncols() {
                    return Err(Error::Data(format!(
                        "entry ({r}, {c}) out of range for shape {:?}",
                        a.dim()
                    )));
                }
                out[(k, 0)] = a[(r, c)];
            }
            out
        };
        Ok(self.tape.push(out, Op::Entries(self.id, Rc::clone(idx))))
    }

    pub fn entry(self, row: usize, col: usize) -> Result<Var<'t>> {
        self.entries(&Rc::from(vec![(row, col)]))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Array2::from_elem((1, 1), a.sum()))
    }

    /// Subtract the column means.
    pub fn center_cols(self) -> Var<'t> {
        self.unary(Op::CenterCols(self.id), |a| {
            let mean = a.mean_axis(Axis(0)).expect("at least one row");
            a - &mean
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(array![[1.0, -2.0], [3.0, 4.0]]);
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad(), Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn square_gradient_is_twice_x() {
        let tape = Tape::new();
        let v = array![[1.0, -2.0, 0.5]];
        let x = tape.param(v.clone());
        let loss = x.mul(x).unwrap().sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad(), &v * 2.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(Array2::zeros((2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let tape = Tape::new();
        let x = tape.param(array![[1.0]]);
        let y = tape.param(array![[2.0, 3.0]]);
        tape.backward(x.sum()).unwrap();
        assert_eq!(y.grad(), Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn matmul_values_and_errors() {
        let tape = Tape::new();
        let a = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.constant(array![[1.0], [1.0]]);
        assert_eq!(a.matmul(b).unwrap().value(), array![[3.0], [7.0]]);
        let eye = tape.constant(Array2::eye(2));
        assert_eq!(eye.matmul(a).unwrap().value(), a.value());
        let err = b.matmul(b).unwrap_err();
        assert!(err.to_string().contains("(2, 1)"));
    }

    #[test]
    fn softmax_rows_examples() {
        let tape = Tape::new();
        let x = tape.constant(array![[0.0, 0.0], [2f64.ln(), 0.0]]);
        let y = x.softmax_rows().value();
        assert!((y[(0, 0)] - 0.5).abs() < 1e-15 && (y[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((y[(1, 0)] - 2.0 / 3.0).abs() < 1e-15 && (y[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_is_finite_for_extreme_logits() {
        let tape = Tape::new();
        let x = tape.param(array![[1000.0, 0.0], [2f64.ln(), 0.0]]);
        let y = x.log_softmax_rows();
        let v = y.value();
        assert_eq!(v[(0, 1)], -1000.0);
        assert!((v[(1, 1)] + 3f64.ln()).abs() < 1e-15);
        tape.backward(y.entry(0, 1).unwrap()).unwrap();
        let g = x.grad();
        assert!((g[(0, 0)] + 1.0).abs() < 1e-15 && (g[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_skips_empty_groups() {
        let tape = Tape::new();
        let s = tape.constant(array![[1.0], [1.0], [5.0]]);
        // segment 1 is empty
        let seg: Rc<[usize]> = Rc::from(vec![0, 0, 2]);
        let p = tape.segment_softmax(s, &seg).unwrap().value();
        assert_eq!(p, array![[0.5], [0.5], [1.0]]);
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let x = tape.constant(array![[-1.0, 2.0]]);
        assert_eq!(x.relu().value(), array![[0.0, 2.0]]);
        assert_eq!(x.leaky_relu(0.2).value(), array![[-0.2, 2.0]]);
        let v = tape.constant(array![[3.0, 4.0], [1.0, 0.0]]);
        let cos = v.cosine_rows(v).unwrap().value();
        assert!((cos[(0, 0)] - 1.0).abs() < 1e-15 && (cos[(1, 0)] - 1.0).abs() < 1e-15);
        let a = tape.constant(array![[1.0, 0.0]]);
        let b = tape.constant(array![[0.0, 1.0]]);
        assert_eq!(a.cosine_rows(b).unwrap().value(), array![[0.0]]);
        assert_eq!(v.l2_norm_rows().value(), array![[5.0], [1.0]]);
    }

    #[test]
    fn zero_row_cosine_is_zero_without_gradient() {
        let tape = Tape::new();
        let a = tape.param(array![[0.0, 0.0], [1.0, 2.0]]);
        let b = tape.param(array![[1.0, 1.0], [2.0, 1.0]]);
        let c = a.cosine_rows(b).unwrap();
        assert_eq!(c.value()[(0, 0)], 0.0);
        tape.backward(c.sum()).unwrap();
        let ga = a.grad();
        let gb = b.grad();
        assert!(ga.row(0).iter().chain(gb.row(0).iter()).all(|&g| g == 0.0));
        assert!(ga.iter().all(|g| g.is_finite()));
    }
}
