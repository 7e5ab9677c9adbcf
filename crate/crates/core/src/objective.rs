//! Training objective: masked cross-entropy plus the over-smoothing penalty
//! on sampled node pairs with different labels.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Denominators of the smoothness penalty below this disable the term.
pub const OVM_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the smoothness penalty.
    pub lambda_ovm: f64,
    /// Number of node pairs sampled per evaluation.
    pub n_sample_pairs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ovm: 1.0,
            n_sample_pairs: 1000,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ovm.is_finite() && self.lambda_ovm >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_ovm must be finite and non-negative, got {}",
                self.lambda_ovm
            )));
        }
        if self.n_sample_pairs == 0 {
            return Err(Error::Config("n_sample_pairs must be at least 1".into()));
        }
        Ok(())
    }
}

fn true_class(labels: &[usize], mask: &[usize]) -> Result<Rc<[(usize, usize)]>> {
    if mask.is_empty() {
        return Err(Error::Contract("cross-entropy over an empty mask".into()));
    }
    mask.iter()
        .map(|&i| {
            labels
                .get(i)
                .map(|&y| (i, y))
                .ok_or_else(|| Error::Data(format!("node {i} has no label")))
        })
        .collect()
}

/// Mean negative log-likelihood of the true labels over `mask`.
pub fn cross_entropy<'t>(probs: Var<'t>, labels: &[usize], mask: &[usize]) -> Result<Var<'t>> {
    let picked = probs.entries(&true_class(labels, mask)?)?.log_clamped(LOG_FLOOR);
    Ok(picked.sum().scale(-1.0 / mask.len() as f64))
}

/// [`cross_entropy`] evaluated from the logits through a log-softmax. Equal
/// wherever the true-class probability is above [`LOG_FLOOR`], and keeps a
/// gradient where it is not.
pub fn cross_entropy_logits<'t>(logits: Var<'t>, labels: &[usize], mask: &[usize]) -> Result<Var<'t>> {
    let picked = logits.log_softmax_rows().entries(&true_class(labels, mask)?)?;
    Ok(picked.sum().scale(-1.0 / mask.len() as f64))
}

/// `n` ordered pairs `(i, j)`, `i != j`, drawn uniformly with replacement
/// from `mask`.
pub fn sample_pairs(mask: &[usize], n: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let m = mask.len();
    if m < 2 {
        return Err(Error::Contract(format!("pair sampling needs at least 2 nodes, mask has {m}")));
    }
    Ok((0..n)
        .map(|_| {
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            (mask[a], mask[b])
        })
        .collect())
}

/// `|pairs| / Σ (1 − cos(x_i, x_j))` over the pairs whose labels differ.
/// Evaluates to a constant 0 when no pair differs or the sum vanishes.
pub fn l_ovm<'t>(hidden: Var<'t>, labels: &[usize], pairs: &[(usize, usize)]) -> Result<Var<'t>> {
    let tape = hidden.tape();
    let n = hidden.shape().0;
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n || i >= labels.len() || j >= labels.len()) {
        return Err(Error::Data(format!("pair ({i}, {j}) out of range for {n} nodes")));
    }
    let (left, right): (Vec<usize>, Vec<usize>) = pairs.iter().filter(|&&(i, j)| labels[i] != labels[j]).copied().unzip();
    if left.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let count = left.len() as f64;
    let cos = hidden
        .gather_rows(&Rc::from(left))?
        .cosine_rows(hidden.gather_rows(&Rc::from(right))?)?;
    let denom = cos.sum().scale(-1.0).add_scalar(count);
    if denom.item() < OVM_GUARD {
        return Ok(tape.scalar(0.0));
    }
    Ok(denom.recip().scale(pairs.len() as f64))
}

/// The pieces of the objective, all `1×1`.
#[derive(Clone, Copy)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub ce: Var<'t>,
    pub ovm: Var<'t>,
}

/// `lambda_ovm · L_ovm + L_ce` with pairs supplied by the caller.
pub fn total_loss<'t>(
    probs: Var<'t>,
    hidden: Var<'t>,
    labels: &[usize],
    mask: &[usize],
    pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<LossParts<'t>> {
    combine(cross_entropy(probs, labels, mask)?, hidden, labels, pairs, cfg)
}

/// [`total_loss`] with the cross-entropy taken from logits, see
/// [`cross_entropy_logits`].
pub fn total_loss_logits<'t>(
    logits: Var<'t>,
    hidden: Var<'t>,
    labels: &[usize],
    mask: &[usize],
    pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<LossParts<'t>> {
    combine(cross_entropy_logits(logits, labels, mask)?, hidden, labels, pairs, cfg)
}

fn combine<'t>(ce: Var<'t>, hidden: Var<'t>, labels: &[usize], pairs: &[(usize, usize)], cfg: &LossConfig) -> Result<LossParts<'t>> {
    let ovm = l_ovm(hidden, labels, pairs)?;
    let total = if cfg.lambda_ovm == 0.0 { ce } else { ovm.scale(cfg.lambda_ovm).add(ce)? };
    Ok(LossParts { total, ce, ovm })
}
