use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the architecture gradient treats the inner optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Treat the weights as constant: plain validation gradient.
    First,
    /// One unrolled weight step, with the mixed second derivative estimated
    /// by a central difference and scaled by `ξ / 2ε`.
    #[default]
    Second,
    /// As `Second` but scaling the central difference by `1/2` only.
    PaperLiteral,
}

/// The two data splits the bilevel problem evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
}

/// Loss value and gradients with respect to weights and architecture.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<Array2<f64>>,
    pub arch: Array2<f64>,
}

/// A problem with inner weights and outer architecture parameters.
///
/// `sample` fixes every random choice (masks, pairs) the loss makes, so two
/// calls with the same sample see the same loss surface.
pub trait Bilevel {
    fn weights(&self) -> &[Array2<f64>];
    fn weights_mut(&mut self) -> &mut [Array2<f64>];
    fn gradients(&self, phase: Phase, sample: u64) -> Result<Gradients>;
}

/// Settings of one architecture-gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchGradConfig {
    pub order: Order,
    /// Virtual step size.
    pub xi: f64,
    /// Probe radius numerator: `ε = epsilon_scale / ‖∇_{ω'} L_val‖`.
    pub epsilon_scale: f64,
}

/// Gradients below this norm skip the second-order correction.
pub const MIN_PROBE_NORM: f64 = 1e-12;

fn global_norm(tensors: &[Array2<f64>]) -> f64 {
    tensors.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

fn set_offset(problem: &mut impl Bilevel, base: &[Array2<f64>], dir: &[Array2<f64>], step: f64) {
    for ((w, b), d) in problem.weights_mut().iter_mut().zip(base).zip(dir) {
        w.assign(&(b + &(d * step)));
    }
}

/// Architecture gradient with the weights restored bitwise afterwards.
///
/// Second order computes `ω' = ω − ξ ∇_ω L_train(ω)`, takes
/// `∇_α L_val(ω')` and subtracts `c · [∇_α L_train(ω⁺) − ∇_α L_train(ω⁻)]`
/// where `ω± = ω ± ε ∇_{ω'} L_val(ω')`.
pub fn arch_gradient(problem: &mut impl Bilevel, cfg: &ArchGradConfig, sample: u64) -> Result<Gradients> {
    if cfg.order == Order::First {
        return problem.gradients(Phase::Val, sample);
    }
    if !(cfg.xi >= 0.0 && cfg.epsilon_scale > 0.0) {
        return Err(Error::Config(format!(
            "xi must be >= 0 and epsilon_scale > 0, got {} and {}",
            cfg.xi, cfg.epsilon_scale
        )));
    }
    let original: Vec<Array2<f64>> = problem.weights().to_vec();
    let result = unrolled(problem, cfg, sample, &original);
    for (w, o) in problem.weights_mut().iter_mut().zip(original) {
        *w = o;
    }
    result
}

fn unrolled(problem: &mut impl Bilevel, cfg: &ArchGradConfig, sample: u64, original: &[Array2<f64>]) -> Result<Gradients> {
    let train = problem.gradients(Phase::Train, sample)?;
    set_offset(problem, original, &train.weights, -cfg.xi);
    let mut val = problem.gradients(Phase::Val, sample)?;
    let norm = global_norm(&val.weights);
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite validation gradient".into()));
    }
    if norm < MIN_PROBE_NORM {
        return Ok(val);
    }
    let eps = cfg.epsilon_scale / norm;
    set_offset(problem, original, &val.weights, eps);
    let plus = problem.gradients(Phase::Train, sample)?.arch;
    set_offset(problem, original, &val.weights, -eps);
    let minus = problem.gradients(Phase::Train, sample)?.arch;
    let scale = match cfg.order {
        Order::Second => cfg.xi / (2.0 * eps),
        Order::PaperLiteral => 0.5,
        Order::First => unreachable!("handled by the caller"),
    };
    val.arch = &val.arch - &((&plus - &minus) * scale);
    Ok(val)
}
