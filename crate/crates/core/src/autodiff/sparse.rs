//! Fixed-sparsity adjacency storage.

use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weighted sparse matrix over `num_nodes` nodes, stored as coordinate
/// triples sorted by `(row, col)`.
///
/// Row `i` of `A·X` is `Σ w_ij · x_j` over the stored entries `(i, j)`, so
/// `row` is the receiving node and `col` the sending one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAdj {
    num_nodes: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    symmetric: bool,
}

impl SparseAdj {
    /// Build from `(row, col, weight)` triples. Rejects duplicates and
    /// out-of-range indices. When `symmetric` is set the entry pattern and
    /// weights must already be symmetric.
    pub fn new(
        num_nodes: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        symmetric: bool,
    ) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= num_nodes || c >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({r}, {c}) out of range for {num_nodes} nodes"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Data(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        let adj = SparseAdj {
            num_nodes,
            rows: entries.iter().map(|e| e.0).collect(),
            cols: entries.iter().map(|e| e.1).collect(),
            weights: entries.iter().map(|e| e.2).collect(),
            symmetric,
        };
        if symmetric {
            for e in 0..adj.nnz() {
                match adj.find(adj.cols[e], adj.rows[e]) {
                    Some(t) if adj.weights[t] == adj.weights[e] => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "edge ({}, {}) has no symmetric partner",
                            adj.rows[e], adj.cols[e]
                        )))
                    }
                }
            }
        }
        Ok(adj)
    }

    /// Unit-weight adjacency from directed pairs; `undirected` adds the
    /// reverse of every pair (pairs given in both directions are merged).
    pub fn from_pairs(num_nodes: usize, pairs: &[(usize, usize)], undirected: bool) -> Result<Self> {
        let mut set = std::collections::BTreeSet::new();
        for &(a, b) in pairs {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            set.insert((a, b));
            if undirected {
                set.insert((b, a));
            }
        }
        SparseAdj::new(num_nodes, set.into_iter().map(|(a, b)| (a, b, 1.0)), undirected)
    }

    pub fn empty(num_nodes: usize) -> Self {
        SparseAdj {
            num_nodes,
            rows: Vec::new(),
            cols: Vec::new(),
            weights: Vec::new(),
            symmetric: true,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored entries (including explicit zeros).
    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nnz()).map(move |e| (self.rows[e], self.cols[e], self.weights[e]))
    }

    /// Position of entry `(row, col)`, if stored.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.rows.partition_point(|&r| r < row);
        let end = self.rows.partition_point(|&r| r <= row);
        self.cols[start..end].binary_search(&col).ok().map(|p| start + p)
    }

    /// Same pattern with new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.nnz(), "weight vector length must match nnz");
        SparseAdj {
            weights,
            ..self.clone()
        }
    }

    /// Keep only entries whose weight is nonzero.
    pub fn pruned(&self) -> Self {
        let keep: Vec<usize> = (0..self.nnz()).filter(|&e| self.weights[e] != 0.0).collect();
        SparseAdj {
            num_nodes: self.num_nodes,
            rows: keep.iter().map(|&e| self.rows[e]).collect(),
            cols: keep.iter().map(|&e| self.cols[e]).collect(),
            weights: keep.iter().map(|&e| self.weights[e]).collect(),
            symmetric: self.symmetric,
        }
    }

    /// `A + I` over the nonzero pattern: unit self-loops are added where
    /// missing; existing diagonal entries get +1.
    pub fn with_self_loops(&self) -> Self {
        let mut entries: std::collections::BTreeMap<(usize, usize), f64> = self
            .entries()
            .filter(|e| e.2 != 0.0)
            .map(|(r, c, w)| ((r, c), w))
            .collect();
        for i in 0..self.num_nodes {
            *entries.entry((i, i)).or_insert(0.0) += 1.0;
        }
        let entries = entries.into_iter().map(|((r, c), w)| (r, c, w));
        SparseAdj::new(self.num_nodes, entries, self.symmetric).expect("self-loop augmentation")
    }

    /// Symmetric normalization `D^{-1/2} A D^{-1/2}` with `D` the row sums.
    pub fn sym_normalized(&self) -> Self {
        let mut deg = vec![0.0; self.num_nodes];
        for (r, _, w) in self.entries() {
            deg[r] += w;
        }
        let inv: Vec<f64> = deg
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let weights = self.entries().map(|(r, c, w)| inv[r] * w * inv[c]).collect();
        self.with_weights(weights)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_nodes, self.num_nodes));
        for (r, c, w) in self.entries() {
            m[(r, c)] += w;
        }
        m
    }

    /// Dense product `A·X`, accumulated in entry order.
    pub fn matmul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_nodes, x.ncols()));
        for (r, c, w) in self.entries() {
            if w != 0.0 {
                out.row_mut(r).scaled_add(w, &x.row(c));
            }
        }
        out
    }

    /// `Aᵀ·G`.
    pub fn transpose_matmul_dense(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_nodes, g.ncols()));
        for (r, c, w) in self.entries() {
            if w != 0.0 {
                out.row_mut(c).scaled_add(w, &g.row(r));
            }
        }
        out
    }
}

/// Unweighted `(row, col)` pairs, used where per-edge weights are computed
/// on the tape (attention). `row` is the receiving node.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    num_nodes: usize,
    rows: Rc<[usize]>,
    cols: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn new(num_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (rows, cols): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        assert!(
            rows.iter().chain(&cols).all(|&i| i < num_nodes),
            "edge index out of range"
        );
        EdgeIndex {
            num_nodes,
            rows: rows.into(),
            cols: cols.into(),
        }
    }

    /// Nonzero pattern of `adj`.
    pub fn from_adj(adj: &SparseAdj) -> Self {
        EdgeIndex::new(
            adj.num_nodes(),
            adj.entries().filter(|e| e.2 != 0.0).map(|(r, c, _)| (r, c)),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Receiving node of every edge; the grouping for per-node softmax.
    pub fn rows(&self) -> &Rc<[usize]> {
        &self.rows
    }

    pub fn cols(&self) -> &Rc<[usize]> {
        &self.cols
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().copied().zip(self.cols.iter().copied())
    }
}
