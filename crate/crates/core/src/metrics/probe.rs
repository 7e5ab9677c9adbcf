use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::sample_pairs;
use crate::rng::{self, Stream};

/// Node splits and optimizer settings of the same-label pair probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_nodes: usize,
    pub val_nodes: usize,
    pub test_nodes: usize,
    /// Pairs sampled within each node split.
    pub pairs_per_split: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Input dropout while fitting.
    pub dropout: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_nodes: 7000,
            val_nodes: 2000,
            test_nodes: 1000,
            pairs_per_split: 5000,
            epochs: 300,
            learning_rate: 0.5,
            dropout: 0.1,
        }
    }
}

impl ProbeConfig {
    /// 70/20/10 node split of a graph with `n` nodes.
    pub fn for_nodes(n: usize) -> Self {
        let train = n * 7 / 10;
        let val = n * 2 / 10;
        ProbeConfig {
            train_nodes: train,
            val_nodes: val,
            test_nodes: n - train - val,
            ..ProbeConfig::default()
        }
    }
}

/// Area under the ROC curve of `scores` against boolean `truth`, counting
/// ties as one half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Contract("AUC needs both positive and negative examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += mid_rank * order[start..end].iter().filter(|&&i| truth[i]).count() as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

struct PairSet {
    features: Array2<f64>,
    truth: Vec<bool>,
}

fn pair_set(x: &Array2<f64>, labels: &[usize], nodes: &[usize], n: usize, rng: &mut impl Rng, split: &str) -> Result<PairSet> {
    let pairs = sample_pairs(nodes, n, rng)?;
    let d = x.ncols();
    let mut features = Array2::zeros((pairs.len(), 2 * d));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        for c in 0..d {
            let (a, b) = (x[(i, c)], x[(j, c)]);
            features[(k, c)] = a * b;
            features[(k, d + c)] = (a - b).abs();
        }
    }
    let truth: Vec<bool> = pairs.iter().map(|&(i, j)| labels[i] == labels[j]).collect();
    if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
        return Err(Error::Contract(format!("{split} pairs contain a single class")));
    }
    Ok(PairSet { features, truth })
}

fn scores(features: &Array2<f64>, w: &Array1<f64>, b: f64) -> Vec<f64> {
    features.dot(w).iter().map(|s| s + b).collect()
}

/// Fit a logistic classifier deciding whether two nodes share a label from
/// their representations and return its test ROC-AUC.
///
/// A pair `(i, j)` is encoded as `[x_i ⊙ x_j, |x_i − x_j|]`, standardized
/// with training statistics. The fitted weights are those with the best
/// validation AUC.
pub fn pair_probe_auc(x: &Array2<f64>, labels: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} rows", labels.len())));
    }
    let needed = cfg.train_nodes + cfg.val_nodes + cfg.test_nodes;
    if needed > n || cfg.train_nodes < 2 || cfg.val_nodes < 2 || cfg.test_nodes < 2 {
        return Err(Error::Contract(format!(
            "probe splits {}/{}/{} do not fit {n} nodes",
            cfg.train_nodes, cfg.val_nodes, cfg.test_nodes
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout) || cfg.learning_rate <= 0.0 || cfg.pairs_per_split == 0 {
        return Err(Error::Config("invalid probe optimizer settings".into()));
    }
    let mut split_rng = rng::stream(seed, Stream::Probe, 0);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut split_rng);
    let (train_nodes, rest) = nodes.split_at(cfg.train_nodes);
    let (val_nodes, rest) = rest.split_at(cfg.val_nodes);
    let test_nodes = &rest[..cfg.test_nodes];

    let mut pair_rng = rng::stream(seed, Stream::Probe, 1);
    let mut train = pair_set(x, labels, train_nodes, cfg.pairs_per_split, &mut pair_rng, "train")?;
    let mut val = pair_set(x, labels, val_nodes, cfg.pairs_per_split, &mut pair_rng, "validation")?;
    let mut test = pair_set(x, labels, test_nodes, cfg.pairs_per_split, &mut pair_rng, "test")?;

    let mean = train.features.mean_axis(Axis(0)).expect("nonempty");
    let std = train.features.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    for set in [&mut train, &mut val, &mut test] {
        set.features = (&set.features - &mean) / &std;
    }

    let dim = train.features.ncols();
    let target = Array1::from_iter(train.truth.iter().map(|&t| if t { 1.0 } else { 0.0 }));
    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0;
    let mut best = (f64::NEG_INFINITY, w.clone(), b);
    let mut drop_rng = rng::stream(seed, Stream::Probe, 2);
    let keep = 1.0 - cfg.dropout;
    let m = train.features.nrows() as f64;
    for epoch in 0..cfg.epochs {
        let inputs = if cfg.dropout > 0.0 {
            train
                .features
                .mapv(|v| if drop_rng.random::<f64>() < cfg.dropout { 0.0 } else { v / keep })
        } else {
            train.features.clone()
        };
        let logits = inputs.dot(&w) + b;
        let residual = logits.mapv(|z| 1.0 / (1.0 + (-z).exp())) - &target;
        w = &w - &(inputs.t().dot(&residual) * (cfg.learning_rate / m));
        b -= cfg.learning_rate * residual.sum() / m;
        if epoch % 10 == 9 || epoch + 1 == cfg.epochs {
            let auc = roc_auc(&scores(&val.features, &w, b), &val.truth)?;
            if auc > best.0 {
                best = (auc, w.clone(), b);
            }
        }
    }
    let (_, w, b) = if best.0.is_finite() { best } else { (0.0, w, b) };
    roc_auc(&scores(&test.features, &w, b), &test.truth)
}
