use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cell::{arch_weights, BlockSpec, DerivedArch, Kept, NodeChoice};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{glorot, Adjacency, OpMode, OpSpec};
use crate::rng::{self, Stream};

/// Anything trainable that maps a graph to class probabilities and a final
/// hidden representation.
pub trait Model {
    fn forward<'t>(&self, tape: &'t Tape, graph: &Graph, mode: OpMode) -> Result<ForwardPass<'t>>;
    /// Rescale freshly initialized weights so that every layer's output on
    /// `graph` has unit root-mean-square in evaluation mode.
    fn calibrate(&mut self, graph: &Graph) -> Result<()>;
    fn weights(&self) -> &[Array2<f64>];
    fn weights_mut(&mut self) -> &mut [Array2<f64>];
}

/// Result of one forward pass on a tape.
pub struct ForwardPass<'t> {
    /// Row-stochastic class predictions `Y`.
    pub probs: Var<'t>,
    /// Classifier output before the softmax.
    pub logits: Var<'t>,
    /// Last hidden representation `X̃`.
    pub hidden: Var<'t>,
    /// Leaves for the weight tensors, in [`Model::weights`] order.
    pub weights: Vec<Var<'t>>,
    /// Leaf for the architecture parameters, when the model has them.
    pub arch: Option<Var<'t>>,
    /// Adjacency leaving the last block.
    pub adjacency: Adjacency,
}

impl ForwardPass<'_> {
    pub fn weight_grads(&self) -> Vec<Array2<f64>> {
        self.weights.iter().map(|w| w.grad()).collect()
    }

    pub fn arch_grad(&self) -> Option<Array2<f64>> {
        self.arch.map(|a| a.grad())
    }
}

/// One candidate operation on an edge, ready to run.
pub struct EdgeOp<'a, 't> {
    pub spec: OpSpec,
    pub weights: &'a [Var<'t>],
    /// Identifies the instance for mask sampling.
    pub key: u64,
}

/// Run every candidate on `(x, a)`; features are combined as `Σ_k c_k x_k`
/// (`c_k = 1` when `coefs` is `None`) and adjacencies multiplied.
pub fn mixed_edge<'t>(
    x: Var<'t>,
    a: &Adjacency,
    ops: &[EdgeOp<'_, 't>],
    coefs: Option<&[Var<'t>]>,
    mode: OpMode,
) -> Result<(Var<'t>, Adjacency)> {
    mix(x, a, ops, coefs, mode, |_, _| {})
}

fn mix<'t>(
    x: Var<'t>,
    a: &Adjacency,
    ops: &[EdgeOp<'_, 't>],
    coefs: Option<&[Var<'t>]>,
    mode: OpMode,
    mut on_output: impl FnMut(usize, Var<'t>),
) -> Result<(Var<'t>, Adjacency)> {
    if ops.is_empty() {
        return Err(Error::Contract("mixed edge needs at least one operation".into()));
    }
    if coefs.is_some_and(|c| c.len() != ops.len()) {
        return Err(Error::Contract("one mixing coefficient per operation".into()));
    }
    let mut sum: Option<Var<'t>> = None;
    let mut adjs = Vec::with_capacity(ops.len());
    for (k, op) in ops.iter().enumerate() {
        let (xk, ak) = op.spec.forward(x, a, op.weights, mode, op.key)?;
        on_output(k, xk);
        let xk = match coefs {
            Some(c) => xk.scale_by(c[k])?,
            None => xk,
        };
        sum = Some(match sum {
            Some(s) => s.add(xk)?,
            None => xk,
        });
        adjs.push(ak);
    }
    Ok((sum.expect("nonempty"), Adjacency::product(&adjs)))
}

/// [`mixed_edge`] weighted by `softmax(lambda)` for a `1×o` row `lambda`.
pub fn mixed_edge_softmax<'t>(
    x: Var<'t>,
    a: &Adjacency,
    lambda: Var<'t>,
    ops: &[EdgeOp<'_, 't>],
    mode: OpMode,
) -> Result<(Var<'t>, Adjacency)> {
    if lambda.shape() != (1, ops.len()) {
        return Err(Error::Dimension {
            op: "mixed_edge",
            left: (1, ops.len()),
            right: lambda.shape(),
        });
    }
    let alpha = lambda.softmax_rows();
    let coefs = (0..ops.len()).map(|k| alpha.entry(0, k)).collect::<Result<Vec<_>>>()?;
    mixed_edge(x, a, ops, Some(&coefs), mode)
}

/// Sum incoming features, multiply incoming adjacencies, then ReLU.
pub fn node_aggregate<'t>(incoming: &[(Var<'t>, Adjacency)]) -> Result<(Var<'t>, Adjacency)> {
    let ((first, _), rest) = incoming
        .split_first()
        .ok_or_else(|| Error::Contract("node has no predecessors".into()))?;
    let mut sum = *first;
    for (x, _) in rest {
        sum = sum.add(*x)?;
    }
    Ok((sum.relu(), Adjacency::product(incoming.iter().map(|(_, a)| a))))
}

/// How a node combines the operations on one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Weighted by the softmax of the architecture parameters.
    Softmax,
    /// Plain sum.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    from: usize,
    to: usize,
    op: OpSpec,
    /// Column of the architecture parameters (supernets only).
    menu_index: usize,
}

/// Shape of the network around the blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub blocks: usize,
}

/// An encoder, `blocks` residually wired cells and a linear classifier.
///
/// As a supernet every edge carries every menu operation mixed by the shared
/// architecture parameters; as a discrete model each node sums only its
/// retained operations. Operation weights are owned per block.
#[derive(Debug, Clone)]
pub struct Network {
    shape: NetShape,
    block: BlockSpec,
    menu: Vec<OpSpec>,
    mixing: Mixing,
    slots: Vec<Slot>,
    weights: Vec<Array2<f64>>,
    arch: Array2<f64>,
    encoder: usize,
    classifier: usize,
    slot_weights: Vec<Vec<Range<usize>>>,
}

impl Network {
    /// Continuous relaxation with all operations on all edges. Architecture
    /// parameters start at zero (uniform mixing).
    pub fn supernet(shape: NetShape, block: BlockSpec, menu: &[OpSpec], seed: u64) -> Result<Self> {
        block.validate()?;
        if menu.is_empty() {
            return Err(Error::Config("operation menu is empty".into()));
        }
        let slots = block
            .edges()
            .into_iter()
            .flat_map(|(from, to)| {
                menu.iter().enumerate().map(move |(k, &op)| Slot {
                    from,
                    to,
                    op,
                    menu_index: k,
                })
            })
            .collect();
        let arch = Array2::zeros((block.num_edges(), menu.len()));
        Network::build(shape, block, menu.to_vec(), Mixing::Softmax, slots, arch, seed)
    }

    /// Discrete model for a derived architecture with fresh weights.
    pub fn discrete(arch: &DerivedArch, in_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shape = NetShape {
            in_dim,
            hidden: arch.hidden_dim,
            classes,
            blocks: arch.blocks,
        };
        let mut menu: Vec<OpSpec> = Vec::new();
        let mut slots = Vec::new();
        for choice in &arch.nodes {
            for kept in &choice.keep {
                let menu_index = match menu.iter().position(|m| *m == kept.op) {
                    Some(i) => i,
                    None => {
                        menu.push(kept.op);
                        menu.len() - 1
                    }
                };
                slots.push(Slot {
                    from: kept.from,
                    to: choice.node,
                    op: kept.op,
                    menu_index,
                });
            }
        }
        Network::build(shape, arch.block_spec(), menu, Mixing::Unit, slots, Array2::zeros((0, 0)), seed)
    }

    fn build(
        shape: NetShape,
        block: BlockSpec,
        menu: Vec<OpSpec>,
        mixing: Mixing,
        slots: Vec<Slot>,
        arch: Array2<f64>,
        seed: u64,
    ) -> Result<Self> {
        if shape.in_dim == 0 || shape.hidden == 0 || shape.classes == 0 || shape.blocks == 0 {
            return Err(Error::Config(format!("network dimensions must be positive: {shape:?}")));
        }
        for op in &menu {
            op.validate()?;
        }
        let mut rng = rng::stream(seed, Stream::Weights, 0);
        let mut weights = vec![glorot(shape.in_dim, shape.hidden, &mut rng)];
        let mut slot_weights = Vec::with_capacity(shape.blocks);
        for _ in 0..shape.blocks {
            let mut ranges = Vec::with_capacity(slots.len());
            for slot in &slots {
                let start = weights.len();
                weights.extend(slot.op.init_weights(shape.hidden, &mut rng));
                ranges.push(start..weights.len());
            }
            slot_weights.push(ranges);
        }
        let classifier = weights.len();
        weights.push(glorot(shape.hidden, shape.classes, &mut rng));
        Ok(Network {
            shape,
            block,
            menu,
            mixing,
            slots,
            weights,
            arch,
            encoder: 0,
            classifier,
            slot_weights,
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn block_spec(&self) -> BlockSpec {
        self.block
    }

    pub fn menu(&self) -> &[OpSpec] {
        &self.menu
    }

    pub fn mixing(&self) -> Mixing {
        self.mixing
    }

    /// Architecture parameters λ, one row per block edge and one column per
    /// menu operation. Empty for discrete models.
    pub fn arch(&self) -> &Array2<f64> {
        &self.arch
    }

    pub fn arch_mut(&mut self) -> &mut Array2<f64> {
        &mut self.arch
    }

    /// Per-edge mixing weights `softmax(λ)`.
    pub fn alpha(&self) -> Array2<f64> {
        arch_weights(&self.arch)
    }

    /// Replace all weights, checking shapes.
    pub fn set_weights(&mut self, weights: Vec<Array2<f64>>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "expected {} weight tensors, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        for (i, (old, new)) in self.weights.iter().zip(&weights).enumerate() {
            if old.dim() != new.dim() {
                return Err(Error::Config(format!(
                    "weight tensor {i} has shape {:?}, expected {:?}",
                    new.dim(),
                    old.dim()
                )));
            }
        }
        self.weights = weights;
        Ok(())
    }

    /// Derive the discrete architecture from the current λ.
    pub fn derive(&self) -> Result<DerivedArch> {
        if self.mixing != Mixing::Softmax {
            return Err(Error::Contract("only supernets carry architecture parameters".into()));
        }
        super::cell::derive_architecture(&self.arch, &self.menu, &self.block, self.shape.blocks, self.shape.hidden)
    }

    /// The architecture a discrete model was built from.
    pub fn architecture(&self) -> DerivedArch {
        let nodes = self
            .block
            .intermediate()
            .map(|j| NodeChoice {
                node: j,
                keep: self
                    .slots
                    .iter()
                    .filter(|s| s.to == j)
                    .map(|s| Kept { from: s.from, op: s.op })
                    .collect(),
            })
            .collect();
        DerivedArch {
            n_intermediate: self.block.n_intermediate,
            top_k: self.block.top_k,
            blocks: self.shape.blocks,
            hidden_dim: self.shape.hidden,
            nodes,
        }
    }

    /// Forward pass, optionally restricted to the operations an architecture
    /// retains. A restricted supernet keeps the softmax weights of the
    /// surviving operations.
    pub fn forward_restricted<'t>(
        &self,
        tape: &'t Tape,
        graph: &Graph,
        mode: OpMode,
        restrict: Option<&DerivedArch>,
    ) -> Result<ForwardPass<'t>> {
        self.run(tape, graph, mode, restrict, None)
    }

    fn run<'t>(
        &self,
        tape: &'t Tape,
        graph: &Graph,
        mode: OpMode,
        restrict: Option<&DerivedArch>,
        mut recorder: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<ForwardPass<'t>> {
        if graph.feature_dim() != self.shape.in_dim {
            return Err(Error::Dimension {
                op: "network input",
                left: (graph.num_nodes(), self.shape.in_dim),
                right: (graph.num_nodes(), graph.feature_dim()),
            });
        }
        let active: Vec<bool> = match restrict {
            None => vec![true; self.slots.len()],
            Some(arch) => {
                let kept: BTreeSet<(usize, usize, usize)> = arch
                    .nodes
                    .iter()
                    .flat_map(|c| c.keep.iter().map(move |k| (k.from, c.node, k.op.kind() as usize)))
                    .collect();
                self.slots
                    .iter()
                    .map(|s| kept.contains(&(s.from, s.to, s.op.kind() as usize)))
                    .collect()
            }
        };

        let weights: Vec<Var<'t>> = self.weights.iter().map(|w| tape.param(w.clone())).collect();
        let (arch, coefs) = match self.mixing {
            Mixing::Softmax => {
                let lambda = tape.param(self.arch.clone());
                let alpha = lambda.softmax_rows();
                let coefs = self
                    .slots
                    .iter()
                    .zip(&active)
                    .map(|(s, &on)| {
                        if on {
                            alpha.entry(self.block.edge_index(s.from, s.to), s.menu_index).map(Some)
                        } else {
                            Ok(None)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Some(lambda), coefs)
            }
            Mixing::Unit => (None, vec![None; self.slots.len()]),
        };

        let input = tape.constant(graph.features().clone());
        let encoded = (input.matmul(weights[self.encoder])?, Adjacency::new(graph.adj()));
        let mut outputs: Vec<(Var<'t>, Adjacency)> = Vec::with_capacity(self.shape.blocks);
        for b in 0..self.shape.blocks {
            let direct = if b >= 1 { outputs[b - 1].clone() } else { encoded.clone() };
            let residual = if b >= 2 { outputs[b - 2].clone() } else { encoded.clone() };
            let out = self.block_forward(b, direct, residual, &weights, &coefs, &active, mode, recorder.as_deref_mut())?;
            outputs.push(out);
        }
        let (hidden, adjacency) = outputs.pop().expect("at least one block");
        let logits = hidden.matmul(weights[self.classifier])?;
        Ok(ForwardPass {
            probs: logits.softmax_rows(),
            logits,
            hidden,
            weights,
            arch,
            adjacency,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn block_forward<'t>(
        &self,
        block: usize,
        direct: (Var<'t>, Adjacency),
        residual: (Var<'t>, Adjacency),
        weights: &[Var<'t>],
        coefs: &[Option<Var<'t>>],
        active: &[bool],
        mode: OpMode,
        mut recorder: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<(Var<'t>, Adjacency)> {
        let mut states = vec![direct, residual];
        for j in self.block.intermediate() {
            let mut incoming = Vec::new();
            for i in 0..j {
                let on_edge: Vec<usize> = (0..self.slots.len())
                    .filter(|&s| active[s] && self.slots[s].from == i && self.slots[s].to == j)
                    .collect();
                if on_edge.is_empty() {
                    continue;
                }
                let ops: Vec<EdgeOp<'_, 't>> = on_edge
                    .iter()
                    .map(|&s| EdgeOp {
                        spec: self.slots[s].op,
                        weights: &weights[self.slot_weights[block][s].clone()],
                        key: ((block as u64) << 32) | s as u64,
                    })
                    .collect();
                let edge_coefs: Option<Vec<Var<'t>>> = match self.mixing {
                    Mixing::Softmax => Some(on_edge.iter().map(|&s| coefs[s].expect("active slot")).collect()),
                    Mixing::Unit => None,
                };
                let (x, a) = &states[i];
                let record = |k: usize, out: Var<'t>| {
                    if let Some(rec) = recorder.as_deref_mut() {
                        rec[block][on_edge[k]] = out.with_value(rms);
                    }
                };
                incoming.push(mix(*x, a, &ops, edge_coefs.as_deref(), mode, record)?);
            }
            if incoming.is_empty() {
                return Err(Error::Contract(format!("intermediate node {j} has no active operations")));
            }
            states.push(node_aggregate(&incoming)?);
        }
        let intermediate = &states[2..];
        let mut x_out = intermediate[0].0;
        for (x, _) in &intermediate[1..] {
            x_out = x_out.add(*x)?;
        }
        Ok((x_out, Adjacency::product(intermediate.iter().map(|(_, a)| a))))
    }
}

pub(super) fn rms(x: &Array2<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Indices of the weights that set the output scale of `op`.
fn scale_weights(op: &OpSpec) -> &'static [usize] {
    match op {
        OpSpec::Gcn {} | OpSpec::Sgc { .. } | OpSpec::Gat { .. } => &[0],
        OpSpec::Sage {} => &[0, 1],
        _ => &[],
    }
}

impl Model for Network {
    fn forward<'t>(&self, tape: &'t Tape, graph: &Graph, mode: OpMode) -> Result<ForwardPass<'t>> {
        self.forward_restricted(tape, graph, mode, None)
    }

    /// Nodes are visited in evaluation order, so each rescaling sees
    /// already calibrated inputs.
    fn calibrate(&mut self, graph: &Graph) -> Result<()> {
        for b in 0..self.shape.blocks {
            for j in self.block.intermediate() {
                let mut record = vec![vec![0.0; self.slots.len()]; self.shape.blocks];
                let tape = Tape::new();
                self.run(&tape, graph, OpMode::eval(), None, Some(&mut record))?;
                for (s, slot) in self.slots.iter().enumerate().filter(|(_, slot)| slot.to == j) {
                    let r = record[b][s];
                    if !(r.is_finite() && r > 0.0) {
                        continue;
                    }
                    let range = self.slot_weights[b][s].clone();
                    for &w in scale_weights(&slot.op) {
                        self.weights[range.start + w].mapv_inplace(|v| v / r);
                    }
                }
            }
        }
        Ok(())
    }

    fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }
}
