use ndarray::Array2;

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// PairNorm: center rows on the global mean, then rescale so the mean
/// squared row norm equals `s²`. A matrix whose rows are all identical
/// centers to zero and is returned as zeros.
pub fn pairnorm(x: Var<'_>, s: f64) -> Result<Var<'_>> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::Contract("pairnorm needs at least one node".into()));
    }
    let centered = x.center_cols();
    let mean_sq = centered.mul(centered)?.sum().scale(1.0 / n as f64);
    if mean_sq.item() < 1e-24 {
        return Ok(x.tape().constant(Array2::zeros((n, d))));
    }
    let factor = mean_sq.sqrt().recip().scale(s);
    centered.scale_by(factor)
}
