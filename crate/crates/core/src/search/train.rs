use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AdamState, Gradients, SearchConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::metrics::{self, EvalReport, MadScope};
use crate::objective::{sample_pairs, total_loss_logits, LossConfig};
use crate::ops::OpMode;
use crate::rng::{self, Stream};
use crate::supernet::{DerivedArch, Model, Network};

/// Total loss on `split` and its gradients, with masks and node pairs drawn
/// from `sample`.
pub fn loss_gradients(model: &impl Model, graph: &Graph, split: Split, loss: &LossConfig, sample: u64) -> Result<Gradients> {
    let tape = Tape::new();
    let pass = model.forward(&tape, graph, OpMode::train(sample))?;
    let mask = graph.mask(split);
    let pairs = if loss.lambda_ovm > 0.0 && mask.len() >= 2 {
        sample_pairs(mask, loss.n_sample_pairs, &mut rng::stream(sample, Stream::Pairs, split as u64))?
    } else {
        Vec::new()
    };
    let parts = total_loss_logits(pass.logits, pass.hidden, graph.labels(), mask, &pairs, loss)?;
    tape.backward(parts.total)?;
    Ok(Gradients {
        loss: parts.total.item(),
        weights: pass.weight_grads(),
        arch: pass.arch_grad().unwrap_or_else(|| Array2::zeros((0, 0))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<TrainEpoch>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn val_accuracy(model: &impl Model, graph: &Graph) -> Result<f64> {
    let tape = Tape::new();
    let pass = model.forward(&tape, graph, OpMode::eval())?;
    let pred = metrics::predictions(&pass.probs.value());
    metrics::accuracy(&pred, graph.labels(), graph.mask(Split::Val))
}

/// Adam on the total training loss, keeping the weights with the best
/// validation accuracy and stopping after `patience` epochs without one.
pub fn train_model(model: &mut impl Model, graph: &Graph, loss: &LossConfig, cfg: &SearchConfig) -> Result<TrainLog> {
    cfg.validate()?;
    loss.validate()?;
    let hp = cfg.weight_adam();
    let mut state = AdamState::new(model.weights());
    let mut best: Option<(usize, f64, Vec<Array2<f64>>)> = None;
    let mut log = TrainLog::default();
    let samples = rng::derive(cfg.seed, u64::MAX);
    for epoch in 0..cfg.train_epochs {
        let grads = loss_gradients(model, graph, Split::Train, loss, rng::derive(samples, epoch as u64))?;
        if !grads.loss.is_finite() || grads.weights.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: loss = {}",
                grads.loss
            )));
        }
        state.step(model.weights_mut(), &grads.weights, &hp);
        let acc = val_accuracy(model, graph)?;
        log.epochs.push(TrainEpoch {
            epoch,
            train_loss: grads.loss,
            val_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((epoch, acc, model.weights().to_vec()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((epoch, acc, weights)) = best {
        for (w, b) in model.weights_mut().iter_mut().zip(weights) {
            *w = b;
        }
        log.best_epoch = epoch;
        log.best_val_accuracy = acc;
    }
    Ok(log)
}

/// Test-split report of a model in evaluation mode.
pub fn evaluate(model: &impl Model, graph: &Graph, scope: MadScope) -> Result<EvalReport> {
    let tape = Tape::new();
    let pass = model.forward(&tape, graph, OpMode::eval())?;
    EvalReport::compute(
        &pass.probs.value(),
        &pass.hidden.value(),
        graph.labels(),
        graph.num_classes(),
        graph.mask(Split::Test),
        &scope.nodes(graph),
    )
}

pub struct Retrained {
    pub network: Network,
    pub log: TrainLog,
    pub report: EvalReport,
}

/// Train a fresh, calibrated discrete model of `arch` and score it on the test split.
pub fn retrain_derived(arch: &DerivedArch, graph: &Graph, loss: &LossConfig, cfg: &SearchConfig) -> Result<Retrained> {
    let mut network = Network::discrete(arch, graph.feature_dim(), graph.num_classes(), rng::derive(cfg.seed, 1))?;
    network.calibrate(graph)?;
    let log = train_model(&mut network, graph, loss, cfg)?;
    let report = evaluate(&network, graph, cfg.mad_scope)?;
    Ok(Retrained { network, log, report })
}
