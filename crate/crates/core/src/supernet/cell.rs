//! Block topology and discrete architectures.
//!
//! A block is a DAG over `n + 3` nodes: node 0 takes the direct input
//! (previous block), node 1 the residual input (the block before that),
//! nodes `2..n+2` are intermediate and the output node sums them. During
//! search every intermediate node is connected to all of its predecessors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::OpSpec;

/// Index of the first intermediate node.
pub const FIRST_INTERMEDIATE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSpec {
    pub n_intermediate: usize,
    /// Operations kept per intermediate node at derivation.
    pub top_k: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            n_intermediate: 4,
            top_k: 2,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_intermediate == 0 || self.top_k == 0 {
            return Err(Error::Config("n_intermediate and top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Total DAG nodes including both inputs and the output.
    pub fn total_nodes(&self) -> usize {
        self.n_intermediate + 3
    }

    /// Intermediate node ids.
    pub fn intermediate(&self) -> std::ops::Range<usize> {
        FIRST_INTERMEDIATE..FIRST_INTERMEDIATE + self.n_intermediate
    }

    /// Every `(from, to)` edge of the fully connected search DAG, ordered by
    /// `to` then `from`. Row `e` of the architecture parameters belongs to
    /// edge `e` of this list.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.intermediate().flat_map(|j| (0..j).map(move |i| (i, j))).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn edge_index(&self, from: usize, to: usize) -> usize {
        debug_assert!(from < to && self.intermediate().contains(&to));
        (to - 1) * to / 2 - 1 + from
    }
}

/// One retained `(predecessor, operation)` choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kept {
    pub from: usize,
    #[serde(flatten)]
    pub op: OpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeChoice {
    pub node: usize,
    pub keep: Vec<Kept>,
}

/// A discrete block architecture plus the stacking it is used with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedArch {
    pub n_intermediate: usize,
    pub top_k: usize,
    pub blocks: usize,
    pub hidden_dim: usize,
    pub nodes: Vec<NodeChoice>,
}

impl DerivedArch {
    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            n_intermediate: self.n_intermediate,
            top_k: self.top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block_spec().validate()?;
        if self.blocks == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("blocks and hidden_dim must be positive".into()));
        }
        if self.nodes.len() != self.n_intermediate {
            return Err(Error::Config(format!(
                "architecture lists {} nodes, expected {}",
                self.nodes.len(),
                self.n_intermediate
            )));
        }
        for (choice, j) in self.nodes.iter().zip(self.block_spec().intermediate()) {
            if choice.node != j {
                return Err(Error::Config(format!("expected node {j}, found node {}", choice.node)));
            }
            if choice.keep.is_empty() || choice.keep.len() > self.top_k {
                return Err(Error::Config(format!(
                    "node {j} keeps {} operations, expected 1..={}",
                    choice.keep.len(),
                    self.top_k
                )));
            }
            for k in &choice.keep {
                if k.from >= j {
                    return Err(Error::Config(format!("node {j} keeps an input from node {}", k.from)));
                }
                k.op.validate()?;
            }
        }
        Ok(())
    }

    /// Length of the longest chain of message-passing operations through
    /// one block.
    pub fn longest_propagation_chain(&self) -> usize {
        let mut depth = vec![0usize; FIRST_INTERMEDIATE + self.n_intermediate];
        for choice in &self.nodes {
            depth[choice.node] = choice
                .keep
                .iter()
                .map(|k| depth[k.from] + usize::from(k.op.kind().is_propagation()))
                .max()
                .unwrap_or(0);
        }
        depth[FIRST_INTERMEDIATE..].iter().copied().max().unwrap_or(0)
    }

    /// Message-passing layers a signal can traverse through the whole stack.
    pub fn effective_depth(&self) -> usize {
        self.blocks * self.longest_propagation_chain()
    }

    /// Fewest blocks reaching an effective depth of at least `target`.
    pub fn blocks_for_depth(&self, target: usize) -> usize {
        target.div_ceil(self.longest_propagation_chain().max(1)).max(1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let arch: DerivedArch = serde_json::from_str(text)?;
        arch.validate()?;
        Ok(arch)
    }
}

/// Row-wise softmax of the architecture parameters.
pub fn arch_weights(lambda: &Array2<f64>) -> Array2<f64> {
    let mut alpha = lambda.clone();
    for mut row in alpha.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    alpha
}

/// Keep, for every intermediate node, the `top_k` strongest `(predecessor,
/// operation)` pairs by softmax weight. Ties go to the lower predecessor,
/// then the lower menu position.
pub fn derive_architecture(
    lambda: &Array2<f64>,
    menu: &[OpSpec],
    spec: &BlockSpec,
    blocks: usize,
    hidden_dim: usize,
) -> Result<DerivedArch> {
    spec.validate()?;
    if lambda.dim() != (spec.num_edges(), menu.len()) {
        return Err(Error::Dimension {
            op: "derive_architecture",
            left: (spec.num_edges(), menu.len()),
            right: lambda.dim(),
        });
    }
    let alpha = arch_weights(lambda);
    let nodes = spec
        .intermediate()
        .map(|j| {
            let mut cands: Vec<(f64, usize, usize)> = (0..j)
                .flat_map(|i| {
                    let e = spec.edge_index(i, j);
                    let alpha = &alpha;
                    (0..menu.len()).map(move |k| (alpha[(e, k)], i, k))
                })
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            if cands.len() < spec.top_k {
                log::warn!(
                    "node {j} has only {} candidates for top_k={}; keeping all",
                    cands.len(),
                    spec.top_k
                );
            }
            NodeChoice {
                node: j,
                keep: cands
                    .iter()
                    .take(spec.top_k)
                    .map(|&(_, from, k)| Kept { from, op: menu[k] })
                    .collect(),
            }
        })
        .collect();
    Ok(DerivedArch {
        n_intermediate: spec.n_intermediate,
        top_k: spec.top_k,
        blocks,
        hidden_dim,
        nodes,
    })
}
