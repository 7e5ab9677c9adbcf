//! Node-classification graphs: validated container, JSON file format,
//! stochastic block model generator and feature preprocessing.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::SparseAdj;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// An immutable, validated node-classification graph.
///
/// Masks are stored as sorted node-index lists. Adjacency holds no
/// self-loops; operations that need `A + I` add them internally.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    adj: SparseAdj,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// On-disk representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub undirected: bool,
    pub train_mask: Vec<usize>,
    pub val_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
    /// Free-form record of how the file was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Which node subset to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

fn data_err(field: &str, message: impl Into<String>) -> Error {
    Error::Load {
        context: format!("field `{field}`"),
        message: message.into(),
    }
}

fn check_mask(name: &str, mask: &[usize], n: usize) -> Result<Vec<usize>> {
    if mask.is_empty() {
        return Err(data_err(name, "mask selects no nodes"));
    }
    let set: BTreeSet<usize> = mask.iter().copied().collect();
    if set.len() != mask.len() {
        return Err(data_err(name, "mask lists a node twice"));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= n) {
        return Err(data_err(name, format!("node {bad} out of range for {n} nodes")));
    }
    Ok(set.into_iter().collect())
}

impl Graph {
    /// Validate and assemble a graph. All invariants are checked here; there
    /// is no other way to construct one.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        adj: SparseAdj,
        train: &[usize],
        val: &[usize],
        test: &[usize],
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(data_err("labels", format!("expected {n} labels, got {}", labels.len())));
        }
        if adj.num_nodes() != n {
            return Err(data_err("edges", "adjacency size differs from node count"));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(data_err(
                "labels",
                format!("label {y} of node {i} out of range for {num_classes} classes"),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(data_err("features", "non-finite feature value"));
        }
        let train = check_mask("train_mask", train, n)?;
        let val = check_mask("val_mask", val, n)?;
        let test = check_mask("test_mask", test, n)?;
        let mut seen = BTreeSet::new();
        for &i in train.iter().chain(&val).chain(&test) {
            if !seen.insert(i) {
                return Err(data_err("masks", format!("masks not disjoint: node {i} appears twice")));
            }
        }
        let present: BTreeSet<usize> = labels.iter().copied().collect();
        let trained: BTreeSet<usize> = train.iter().map(|&i| labels[i]).collect();
        if let Some(c) = present.difference(&trained).next() {
            return Err(data_err("train_mask", format!("class {c} has no training node")));
        }
        Ok(Graph {
            features,
            labels,
            num_classes,
            adj,
            train,
            val,
            test,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn adj(&self) -> &SparseAdj {
        &self.adj
    }

    pub fn mask(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        let GraphFile {
            num_nodes,
            feature_dim,
            num_classes,
            features,
            labels,
            edges,
            undirected,
            train_mask,
            val_mask,
            test_mask,
            provenance: _,
        } = file;
        if features.len() != num_nodes {
            return Err(data_err(
                "features",
                format!("expected {num_nodes} rows, got {}", features.len()),
            ));
        }
        if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != feature_dim) {
            return Err(data_err(
                "features",
                format!("row {i} has {} entries, expected {feature_dim}", row.len()),
            ));
        }
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((num_nodes, feature_dim), flat)
            .map_err(|e| data_err("features", e.to_string()))?;
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a == b) {
            return Err(data_err("edges", format!("self-loop ({a}, {b}) not allowed in file")));
        }
        let adj = SparseAdj::from_pairs(num_nodes, &pairs, undirected)
            .map_err(|e| data_err("edges", e.to_string()))?;
        Graph::new(features, labels, num_classes, adj, &train_mask, &val_mask, &test_mask)
    }

    pub fn to_file(&self) -> GraphFile {
        let edges = self
            .adj
            .entries()
            .filter(|&(r, c, w)| w != 0.0 && (!self.adj.is_symmetric() || r < c))
            .map(|(r, c, _)| [r, c])
            .collect();
        GraphFile {
            num_nodes: self.num_nodes(),
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes,
            features: self.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: self.labels.clone(),
            edges,
            undirected: self.adj.is_symmetric(),
            train_mask: self.train.clone(),
            val_mask: self.val.clone(),
            test_mask: self.test.clone(),
            provenance: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Load {
            context: format!("graph JSON at line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Graph::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("graph serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Scale every nonzero feature row to sum to one. Zero rows are kept.
    pub fn row_normalized(&self) -> Graph {
        let mut g = self.clone();
        for mut row in g.features.rows_mut() {
            let s: f64 = row.sum();
            if s != 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        g
    }
}

/// Read and validate a graph file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    Graph::from_json(&text).map_err(|e| match e {
        Error::Load { context, message } => Error::Load {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

/// Parameters of a planted-partition stochastic block model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub communities: usize,
    pub nodes_per_community: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Offset of each community's feature mean along its own coordinates.
    pub feature_signal: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            communities: 3,
            nodes_per_community: 100,
            p_intra: 0.1,
            p_inter: 0.01,
            feature_dim: 16,
            feature_signal: 1.0,
            train_per_class: 20,
            val_per_class: 50,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let probs_ok = (0.0..=1.0).contains(&self.p_intra)
            && (0.0..=1.0).contains(&self.p_inter)
            && self.p_inter <= self.p_intra;
        if !probs_ok {
            return Err(Error::Config(format!(
                "need 0 <= p_inter <= p_intra <= 1, got p_intra={} p_inter={}",
                self.p_intra, self.p_inter
            )));
        }
        if self.communities == 0 || self.feature_dim == 0 {
            return Err(Error::Config("communities and feature_dim must be positive".into()));
        }
        let needed = self.train_per_class + self.val_per_class;
        if self.train_per_class == 0 || self.val_per_class == 0 || self.nodes_per_community <= needed {
            return Err(Error::Config(format!(
                "nodes_per_community={} cannot fill {} train + {} val nodes per class and leave test nodes",
                self.nodes_per_community, self.train_per_class, self.val_per_class
            )));
        }
        Ok(())
    }
}

/// Community `k`'s mean is `feature_signal` on every coordinate `d` with
/// `d % communities == k` and zero elsewhere; features add unit Gaussian
/// noise. Splits take `train_per_class` / `val_per_class` random nodes of
/// every community and leave the rest for testing.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.communities * cfg.nodes_per_community;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_community).collect();

    let mut edge_rng = rng::stream(cfg.seed, Stream::Sbm, 0);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_intra } else { cfg.p_inter };
            if edge_rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    let adj = SparseAdj::from_pairs(n, &pairs, true)?;

    let mut feat_rng = rng::stream(cfg.seed, Stream::Sbm, 1);
    let features = Array2::from_shape_fn((n, cfg.feature_dim), |(i, d)| {
        let mean = if d % cfg.communities == labels[i] { cfg.feature_signal } else { 0.0 };
        mean + feat_rng.sample::<f64, _>(StandardNormal)
    });

    let mut split_rng = rng::stream(cfg.seed, Stream::Sbm, 2);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..cfg.communities {
        let mut members: Vec<usize> =
            (c * cfg.nodes_per_community..(c + 1) * cfg.nodes_per_community).collect();
        members.shuffle(&mut split_rng);
        let (tr, rest) = members.split_at(cfg.train_per_class);
        let (va, te) = rest.split_at(cfg.val_per_class);
        train.extend_from_slice(tr);
        val.extend_from_slice(va);
        test.extend_from_slice(te);
    }
    Graph::new(features, labels, cfg.communities, adj, &train, &val, &test)
}
