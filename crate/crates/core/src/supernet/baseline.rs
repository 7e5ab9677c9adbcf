use ndarray::Array2;

use super::network::{rms, ForwardPass, Model};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{gcn, glorot, Adjacency, OpMode};
use crate::rng::{self, Stream};

/// Encoder, `layers` GCN layers each followed by ReLU, and a linear
/// classifier, without skip connections.
#[derive(Debug, Clone)]
pub struct GcnStack {
    layers: usize,
    weights: Vec<Array2<f64>>,
}

impl GcnStack {
    pub fn new(in_dim: usize, hidden: usize, classes: usize, layers: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || classes == 0 {
            return Err(Error::Config("GCN stack dimensions must be positive".into()));
        }
        let mut rng = rng::stream(seed, Stream::Weights, 0);
        let mut weights = vec![glorot(in_dim, hidden, &mut rng)];
        weights.extend((0..layers).map(|_| glorot(hidden, hidden, &mut rng)));
        weights.push(glorot(hidden, classes, &mut rng));
        Ok(GcnStack { layers, weights })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }
}

impl Model for GcnStack {
    fn forward<'t>(&self, tape: &'t Tape, graph: &Graph, _mode: OpMode) -> Result<ForwardPass<'t>> {
        let weights: Vec<_> = self.weights.iter().map(|w| tape.param(w.clone())).collect();
        let adjacency = Adjacency::new(graph.adj());
        let mut h = tape.constant(graph.features().clone()).matmul(weights[0])?;
        for theta in &weights[1..=self.layers] {
            h = gcn(h, &adjacency, *theta)?.relu();
        }
        let logits = h.matmul(weights[self.layers + 1])?;
        Ok(ForwardPass {
            probs: logits.softmax_rows(),
            logits,
            hidden: h,
            weights,
            arch: None,
            adjacency,
        })
    }

    fn calibrate(&mut self, graph: &Graph) -> Result<()> {
        let tape = Tape::new();
        let adjacency = Adjacency::new(graph.adj());
        let mut h = tape.constant(graph.features().dot(&self.weights[0]));
        for l in 1..=self.layers {
            let out = gcn(h, &adjacency, tape.constant(self.weights[l].clone()))?;
            let r = out.with_value(rms);
            if r.is_finite() && r > 0.0 {
                self.weights[l].mapv_inplace(|v| v / r);
            }
            h = out.scale(1.0 / r.max(f64::MIN_POSITIVE)).relu();
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
