//! Bilevel architecture search over the supernet, validation of derived
//! blocks, and training of discrete models.

mod adam;
mod bilevel;
mod train;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use adam::{AdamParams, AdamState};
pub use bilevel::{arch_gradient, ArchGradConfig, Bilevel, Gradients, Order, Phase, MIN_PROBE_NORM};
pub use train::{evaluate, loss_gradients, retrain_derived, train_model, Retrained, TrainEpoch, TrainLog};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::metrics::{self, MadScope};
use crate::objective::LossConfig;
use crate::ops::{OpMode, OpSpec};
use crate::rng;
use crate::supernet::{BlockSpec, DerivedArch, NetShape, Network};

/// Weight of validation MAD (×100 scale, at most 200) in the validation
/// score: small enough that any accuracy gap of 1e-4 dominates.
pub const MAD_TIE_WEIGHT: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub lr_weights: f64,
    pub lr_arch: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_scale: f64,
    /// Virtual step size; `None` uses `lr_weights`.
    pub xi: Option<f64>,
    pub order: Order,
    /// Search epochs.
    pub max_epochs: usize,
    /// Epochs without improvement before search or training stops; 0
    /// disables early stopping.
    pub patience: usize,
    /// Epochs when training a discrete model.
    pub train_epochs: usize,
    /// Keep the architecture parameters fixed during search.
    pub freeze_arch: bool,
    pub mad_scope: MadScope,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lr_weights: 0.005,
            lr_arch: 0.005,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_scale: 0.01,
            xi: None,
            order: Order::Second,
            max_epochs: 200,
            patience: 50,
            train_epochs: 400,
            freeze_arch: false,
            mad_scope: MadScope::All,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_weights", self.lr_weights),
            ("lr_arch", self.lr_arch),
            ("epsilon_scale", self.epsilon_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if let Some(xi) = self.xi {
            if !(xi.is_finite() && xi >= 0.0) {
                return Err(Error::Config(format!("xi must be >= 0, got {xi}")));
            }
        }
        Ok(())
    }

    pub fn weight_adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamParams::new(self.lr_weights, self.weight_decay)
        }
    }

    pub fn arch_adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamParams::new(self.lr_arch, self.weight_decay)
        }
    }

    pub fn arch_grad(&self) -> ArchGradConfig {
        ArchGradConfig {
            order: self.order,
            xi: self.xi.unwrap_or(self.lr_weights),
            epsilon_scale: self.epsilon_scale,
        }
    }
}

/// The supernet as a bilevel problem on one graph.
pub struct SupernetProblem<'g> {
    pub net: Network,
    pub graph: &'g Graph,
    pub loss: LossConfig,
}

impl Bilevel for SupernetProblem<'_> {
    fn weights(&self) -> &[Array2<f64>] {
        crate::supernet::Model::weights(&self.net)
    }

    fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        crate::supernet::Model::weights_mut(&mut self.net)
    }

    fn gradients(&self, phase: Phase, sample: u64) -> Result<Gradients> {
        let split = match phase {
            Phase::Train => Split::Train,
            Phase::Val => Split::Val,
        };
        loss_gradients(&self.net, self.graph, split, &self.loss, sample)
    }
}

/// Validation outcome of one derived block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValScore {
    pub accuracy: f64,
    /// MAD ×100 of the validation nodes' final representations.
    pub mad: f64,
    pub score: f64,
}

/// Validation accuracy of the supernet restricted to the operations `arch`
/// retains, plus [`MAD_TIE_WEIGHT`] times the validation MAD.
pub fn validation_score(net: &Network, arch: &DerivedArch, graph: &Graph) -> Result<ValScore> {
    let tape = crate::autodiff::Tape::new();
    let pass = net.forward_restricted(&tape, graph, OpMode::eval(), Some(arch))?;
    let val = graph.mask(Split::Val);
    let pred = metrics::predictions(&pass.probs.value());
    let accuracy = metrics::accuracy(&pred, graph.labels(), val)?;
    let hidden = pass.hidden.value().select(Axis(0), val);
    let mad = if val.len() >= 2 { metrics::mad_all(&hidden)? } else { 0.0 };
    Ok(ValScore {
        accuracy,
        mad,
        score: accuracy + MAD_TIE_WEIGHT * mad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub epoch: usize,
    pub arch: DerivedArch,
    pub score: ValScore,
}

/// Derived blocks in strictly increasing order of validation score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockList {
    entries: Vec<BlockEntry>,
}

impl BlockList {
    /// Append if the score beats the last entry; report whether it did.
    pub fn offer(&mut self, entry: BlockEntry) -> bool {
        let better = self.entries.last().is_none_or(|last| entry.score.score > last.score.score);
        if better {
            self.entries.push(entry);
        }
        better
    }

    pub fn best(&self) -> Option<&BlockEntry> {
        self.entries.last()
    }

    pub fn entries(&self) -> &[BlockEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_mad: f64,
    pub list_size: usize,
}

pub struct SearchOutcome {
    pub blocks: BlockList,
    pub log: Vec<EpochLog>,
    pub supernet: Network,
}

fn check_finite(epoch: usize, what: &str, value: f64, net: &Network) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    let lambda_max = net.arch().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let weight_max = crate::supernet::Model::weights(net)
        .iter()
        .flat_map(|w| w.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Err(Error::Numeric(format!(
        "search diverged at epoch {epoch}: {what} = {value}; max |λ| = {lambda_max:.6e}, max |ω| = {weight_max:.6e}"
    )))
}

fn all_finite(tensors: &[Array2<f64>]) -> f64 {
    if tensors.iter().all(|t| t.iter().all(|v| v.is_finite())) {
        0.0
    } else {
        f64::NAN
    }
}

/// Alternate architecture and weight steps, deriving and validating a
/// block after every epoch and keeping those that improve.
pub fn search_loop(
    graph: &Graph,
    shape: NetShape,
    block: BlockSpec,
    menu: &[OpSpec],
    loss: &LossConfig,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    loss.validate()?;
    let mut net = Network::supernet(shape, block, menu, cfg.seed)?;
    crate::supernet::Model::calibrate(&mut net, graph)?;
    let mut problem = SupernetProblem { net, graph, loss: *loss };
    let mut weight_state = AdamState::new(problem.weights());
    let mut arch_state = AdamState::new(std::slice::from_ref(problem.net.arch()));
    let (weight_hp, arch_hp, grad_cfg) = (cfg.weight_adam(), cfg.arch_adam(), cfg.arch_grad());
    let mut blocks = BlockList::default();
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let arch_sample = rng::derive(cfg.seed, 2 * epoch as u64);
        let weight_sample = rng::derive(cfg.seed, 2 * epoch as u64 + 1);

        let val = arch_gradient(&mut problem, &grad_cfg, arch_sample)?;
        check_finite(epoch, "validation loss", val.loss, &problem.net)?;
        check_finite(epoch, "architecture gradient", all_finite(std::slice::from_ref(&val.arch)), &problem.net)?;
        if !cfg.freeze_arch {
            let mut arch = vec![problem.net.arch().clone()];
            arch_state.step(&mut arch, &[val.arch], &arch_hp);
            *problem.net.arch_mut() = arch.pop().expect("one tensor");
        }

        let train = problem.gradients(Phase::Train, weight_sample)?;
        check_finite(epoch, "training loss", train.loss, &problem.net)?;
        check_finite(epoch, "weight gradient", all_finite(&train.weights), &problem.net)?;
        weight_state.step(problem.weights_mut(), &train.weights, &weight_hp);

        let arch = problem.net.derive()?;
        let score = validation_score(&problem.net, &arch, graph)?;
        blocks.offer(BlockEntry { epoch, arch, score });
        stale = if blocks.best().is_some_and(|b| b.epoch == epoch) { 0 } else { stale + 1 };
        log::debug!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4} mad {:.2} |L| {}",
            train.loss,
            val.loss,
            score.accuracy,
            score.mad,
            blocks.len()
        );
        log.push(EpochLog {
            epoch,
            train_loss: train.loss,
            val_loss: val.loss,
            val_accuracy: score.accuracy,
            val_mad: score.mad,
            list_size: blocks.len(),
        });
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    Ok(SearchOutcome {
        blocks,
        log,
        supernet: problem.net,
    })
}
