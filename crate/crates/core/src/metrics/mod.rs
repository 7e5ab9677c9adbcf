//! Evaluation: classification scores, representation smoothness, the
//! integrative ranking across methods, and the same-label pair probe.

mod probe;
mod rank;
mod smoothness;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

pub use probe::{pair_probe_auc, roc_auc, ProbeConfig};
pub use rank::{integrative_rank, MethodScores, RankRow, RankTable};
pub use smoothness::{cosine_distance, mad, mad_all, mad_tgt};

/// Arg-max of each row; the lowest index wins ties.
pub fn predictions(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn check_mask(pred: &[usize], labels: &[usize], mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Contract("metric over an empty mask".into()));
    }
    if let Some(&i) = mask.iter().find(|&&i| i >= pred.len() || i >= labels.len()) {
        return Err(Error::Data(format!("mask node {i} out of range")));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], labels: &[usize], mask: &[usize]) -> Result<f64> {
    check_mask(pred, labels, mask)?;
    let hits = mask.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(hits as f64 / mask.len() as f64)
}

/// Precision, recall and F1 of one class. Undefined ratios are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn per_class(pred: &[usize], labels: &[usize], mask: &[usize], num_classes: usize) -> Result<Vec<ClassScores>> {
    check_mask(pred, labels, mask)?;
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for &i in mask {
        let (p, y) = (pred[i], labels[i]);
        if p >= num_classes || y >= num_classes {
            return Err(Error::Data(format!("class index out of range at node {i}")));
        }
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], actual[c]);
            let f1 = if tp[c] == 0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: actual[c],
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
pub fn macro_f1(pred: &[usize], labels: &[usize], mask: &[usize], num_classes: usize) -> Result<f64> {
    let scores = per_class(pred, labels, mask, num_classes)?;
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / num_classes as f64)
}

/// Which nodes the reported smoothness is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MadScope {
    #[default]
    All,
    Test,
}

impl MadScope {
    pub fn nodes(self, graph: &Graph) -> Vec<usize> {
        match self {
            MadScope::All => (0..graph.num_nodes()).collect(),
            MadScope::Test => graph.mask(Split::Test).to_vec(),
        }
    }
}

/// Test-split scores of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Global MAD of the final representation, ×100.
    pub mad: f64,
    /// Cross-label MAD, ×100; absent when fewer than two labels occur.
    pub mad_tgt: Option<f64>,
    pub per_class: Vec<ClassScores>,
}

impl EvalReport {
    /// Score predictions on `mask`; smoothness is measured over `mad_nodes`.
    pub fn compute(
        probs: &Array2<f64>,
        hidden: &Array2<f64>,
        labels: &[usize],
        num_classes: usize,
        mask: &[usize],
        mad_nodes: &[usize],
    ) -> Result<Self> {
        let pred = predictions(probs);
        let sub = hidden.select(ndarray::Axis(0), mad_nodes);
        let sub_labels: Vec<usize> = mad_nodes.iter().map(|&i| labels[i]).collect();
        let distinct = sub_labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        Ok(EvalReport {
            accuracy: accuracy(&pred, labels, mask)?,
            macro_f1: macro_f1(&pred, labels, mask, num_classes)?,
            mad: mad_all(&sub)?,
            mad_tgt: if distinct >= 2 { Some(mad_tgt(&sub, &sub_labels)?) } else { None },
            per_class: per_class(&pred, labels, mask, num_classes)?,
        })
    }
}
