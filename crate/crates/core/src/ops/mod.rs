//! The candidate operations of the search space.
//!
//! Every operation maps a `(features, adjacency)` pair to a new pair of the
//! same shape. Message-passing layers and PairNorm transform features;
//! DropEdge thins the adjacency; the DropAttr family masks features. No
//! operation applies an activation.

mod adjacency;
mod attention;
mod drop;
mod norm;
mod propagate;

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

pub use adjacency::Adjacency;
pub use attention::{agnn, agnn_propagation, gat, gat_attention};
pub use drop::{
    drop_attr_cols, drop_attr_entries, drop_attr_rows, drop_edge, drop_count, sample_col_mask,
    sample_edge_mask, sample_entry_mask, sample_row_mask,
};
pub use norm::pairnorm;
pub use propagate::{gcn, sage, sgc};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// The ten operation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Gcn,
    Gat,
    Sage,
    Sgc,
    Agnn,
    Pairnorm,
    Dropedge,
    DropattrR,
    DropattrC,
    DropattrE,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Gcn,
        OpKind::Gat,
        OpKind::Sage,
        OpKind::Sgc,
        OpKind::Agnn,
        OpKind::Pairnorm,
        OpKind::Dropedge,
        OpKind::DropattrR,
        OpKind::DropattrC,
        OpKind::DropattrE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Gcn => "gcn",
            OpKind::Gat => "gat",
            OpKind::Sage => "sage",
            OpKind::Sgc => "sgc",
            OpKind::Agnn => "agnn",
            OpKind::Pairnorm => "pairnorm",
            OpKind::Dropedge => "dropedge",
            OpKind::DropattrR => "dropattr_r",
            OpKind::DropattrC => "dropattr_c",
            OpKind::DropattrE => "dropattr_e",
        }
    }

    /// Message-passing layers; these make up a block's convolutional depth.
    pub fn is_propagation(self) -> bool {
        matches!(self, OpKind::Gcn | OpKind::Gat | OpKind::Sage | OpKind::Sgc | OpKind::Agnn)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            OpKind::Dropedge | OpKind::DropattrR | OpKind::DropattrC | OpKind::DropattrE
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An operation together with its fixed hyperparameters. Serializes as
/// `{"op": "<name>", "hyper": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "hyper", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    Gcn {},
    Gat { slope: f64 },
    Sage {},
    Sgc { k: usize },
    Agnn {},
    Pairnorm { s: f64 },
    Dropedge { p: f64 },
    DropattrR { rate: f64 },
    DropattrC { rate: f64 },
    DropattrE { p: f64 },
}

/// Hyperparameters for building the default operation menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpHyper {
    pub gat_slope: f64,
    pub sgc_k: usize,
    pub pairnorm_s: f64,
    pub dropedge_p: f64,
    pub dropattr_rc_rate: f64,
    pub dropattr_e_p: f64,
}

impl Default for OpHyper {
    fn default() -> Self {
        OpHyper {
            gat_slope: 0.2,
            sgc_k: 2,
            pairnorm_s: 1.0,
            dropedge_p: 0.3,
            dropattr_rc_rate: 0.1,
            dropattr_e_p: 0.6,
        }
    }
}

impl OpHyper {
    /// One operation of every kind, in [`OpKind::ALL`] order.
    pub fn menu(&self) -> Vec<OpSpec> {
        OpKind::ALL.iter().map(|&k| self.spec(k)).collect()
    }

    pub fn spec(&self, kind: OpKind) -> OpSpec {
        match kind {
            OpKind::Gcn => OpSpec::Gcn {},
            OpKind::Gat => OpSpec::Gat { slope: self.gat_slope },
            OpKind::Sage => OpSpec::Sage {},
            OpKind::Sgc => OpSpec::Sgc { k: self.sgc_k },
            OpKind::Agnn => OpSpec::Agnn {},
            OpKind::Pairnorm => OpSpec::Pairnorm { s: self.pairnorm_s },
            OpKind::Dropedge => OpSpec::Dropedge { p: self.dropedge_p },
            OpKind::DropattrR => OpSpec::DropattrR { rate: self.dropattr_rc_rate },
            OpKind::DropattrC => OpSpec::DropattrC { rate: self.dropattr_rc_rate },
            OpKind::DropattrE => OpSpec::DropattrE { p: self.dropattr_e_p },
        }
    }
}

/// Train/eval switch plus the seed that fixes every stochastic mask of one
/// forward pass. Two passes with equal modes sample identical masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpMode {
    pub training: bool,
    pub seed: u64,
}

impl OpMode {
    pub fn train(seed: u64) -> Self {
        OpMode { training: true, seed }
    }

    pub fn eval() -> Self {
        OpMode {
            training: false,
            seed: 0,
        }
    }

    /// Mask generator for the operation instance identified by `key`.
    pub fn rng(&self, key: u64) -> rand_chacha::ChaCha8Rng {
        rng::stream(self.seed, Stream::Masks, key)
    }
}

impl OpSpec {
    pub fn kind(&self) -> OpKind {
        match self {
            OpSpec::Gcn {} => OpKind::Gcn,
            OpSpec::Gat { .. } => OpKind::Gat,
            OpSpec::Sage {} => OpKind::Sage,
            OpSpec::Sgc { .. } => OpKind::Sgc,
            OpSpec::Agnn {} => OpKind::Agnn,
            OpSpec::Pairnorm { .. } => OpKind::Pairnorm,
            OpSpec::Dropedge { .. } => OpKind::Dropedge,
            OpSpec::DropattrR { .. } => OpKind::DropattrR,
            OpSpec::DropattrC { .. } => OpKind::DropattrC,
            OpSpec::DropattrE { .. } => OpKind::DropattrE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        let ok = match *self {
            OpSpec::Sgc { k } => k >= 1,
            OpSpec::Gat { slope } => slope.is_finite(),
            OpSpec::Pairnorm { s } => s > 0.0 && s.is_finite(),
            OpSpec::Dropedge { p } | OpSpec::DropattrE { p } => rate_ok(p),
            OpSpec::DropattrR { rate } | OpSpec::DropattrC { rate } => rate_ok(rate),
            OpSpec::Gcn {} | OpSpec::Sage {} | OpSpec::Agnn {} => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyperparameters for {}: {self:?}", self.kind())))
        }
    }

    /// Shapes of the learnable tensors for hidden width `d`.
    pub fn weight_shapes(&self, d: usize) -> Vec<(usize, usize)> {
        match self {
            OpSpec::Gcn {} | OpSpec::Sgc { .. } => vec![(d, d)],
            // Θ, then the attention vector split into receiver and sender halves
            OpSpec::Gat { .. } => vec![(d, d), (d, 1), (d, 1)],
            OpSpec::Sage {} => vec![(d, d), (d, d)],
            OpSpec::Agnn {} => vec![(1, 1)],
            _ => vec![],
        }
    }

    /// Fresh weights: Glorot-uniform matrices, AGNN's β set to 1.
    pub fn init_weights(&self, d: usize, rng: &mut impl Rng) -> Vec<Array2<f64>> {
        match self {
            OpSpec::Agnn {} => vec![Array2::ones((1, 1))],
            OpSpec::Gat { .. } => {
                // the attention vector a has 2d inputs
                let limit = (6.0 / (2 * d + 1) as f64).sqrt();
                vec![glorot(d, d, rng), uniform((d, 1), limit, rng), uniform((d, 1), limit, rng)]
            }
            _ => self.weight_shapes(d).into_iter().map(|(r, c)| glorot(r, c, rng)).collect(),
        }
    }

    /// Apply the operation. `key` identifies this operation instance so its
    /// random mask is reproducible under a fixed `mode`.
    pub fn forward<'t>(
        &self,
        x: Var<'t>,
        adj: &Adjacency,
        weights: &[Var<'t>],
        mode: OpMode,
        key: u64,
    ) -> Result<(Var<'t>, Adjacency)> {
        let expected = self.weight_shapes(x.shape().1).len();
        if weights.len() != expected {
            return Err(Error::Contract(format!(
                "{} expects {expected} weight tensors, got {}",
                self.kind(),
                weights.len()
            )));
        }
        let same = |v: Var<'t>| (v, adj.clone());
        Ok(match *self {
            OpSpec::Gcn {} => same(gcn(x, adj, weights[0])?),
            OpSpec::Gat { slope } => same(gat(x, adj, weights[0], weights[1], weights[2], slope)?),
            OpSpec::Sage {} => same(sage(x, adj, weights[0], weights[1])?),
            OpSpec::Sgc { k } => same(sgc(x, adj, weights[0], k)?),
            OpSpec::Agnn {} => same(agnn(x, adj, weights[0])?),
            OpSpec::Pairnorm { s } => same(pairnorm(x, s)?),
            OpSpec::Dropedge { p } => (x, drop_edge(adj, p, mode.training, &mut mode.rng(key))),
            OpSpec::DropattrR { rate } => same(drop_attr_rows(x, rate, mode.training, &mut mode.rng(key))?),
            OpSpec::DropattrC { rate } => same(drop_attr_cols(x, rate, mode.training, &mut mode.rng(key))?),
            OpSpec::DropattrE { p } => same(drop_attr_entries(x, p, mode.training, &mut mode.rng(key))?),
        })
    }
}

fn uniform(shape: (usize, usize), limit: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Array2::from_shape_simple_fn(shape, || rng.sample(dist))
}

/// Glorot-uniform initialization.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform((fan_in, fan_out), limit, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_serialize_with_names() {
        let menu = OpHyper::default().menu();
        let names: Vec<String> = menu
            .iter()
            .map(|s| serde_json::to_value(s).unwrap()["op"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(
            names,
            ["gcn", "gat", "sage", "sgc", "agnn", "pairnorm", "dropedge", "dropattr_r", "dropattr_c", "dropattr_e"]
        );
        let sgc: OpSpec = serde_json::from_str(r#"{"op":"sgc","hyper":{"k":3}}"#).unwrap();
        assert_eq!(sgc, OpSpec::Sgc { k: 3 });
        assert_eq!(serde_json::to_string(&OpSpec::Gcn {}).unwrap(), r#"{"op":"gcn","hyper":{}}"#);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(OpSpec::Sgc { k: 0 }.validate().is_err());
        assert!(OpSpec::Dropedge { p: 1.0 }.validate().is_err());
        assert!(OpSpec::DropattrR { rate: -0.1 }.validate().is_err());
        for spec in OpHyper::default().menu() {
            spec.validate().unwrap();
        }
    }
}
