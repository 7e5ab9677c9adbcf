use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

fn norm(row: ArrayView1<'_, f64>) -> f64 {
    row.dot(&row).sqrt()
}

/// `1 − cos(a, b)`. Two zero vectors are at distance 0; a zero vector is at
/// distance 1 from any nonzero one.
pub fn cosine_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    match (na > 0.0, nb > 0.0) {
        (true, true) => 1.0 - a.dot(&b) / (na * nb),
        (false, false) => 0.0,
        _ => 1.0,
    }
}

/// Mean over anchor nodes of the average cosine distance to their target
/// partners, ×100. `target(i, j)` selects partners `j != i` of node `i`;
/// nodes without partners are skipped.
pub fn mad(x: &Array2<f64>, target: impl Fn(usize, usize) -> bool) -> Result<f64> {
    let n = x.nrows();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let (mut sum, mut count) = (0.0, 0usize);
        for j in (0..n).filter(|&j| j != i && target(i, j)) {
            sum += cosine_distance(x.row(i), x.row(j));
            count += 1;
        }
        if count > 0 {
            total += sum / count as f64;
            anchors += 1;
        }
    }
    if anchors == 0 {
        return Err(Error::Contract("no node has a target partner".into()));
    }
    Ok(100.0 * total / anchors as f64)
}

/// [`mad`] with every other node as a target.
pub fn mad_all(x: &Array2<f64>) -> Result<f64> {
    mad(x, |_, _| true)
}

/// Mean of [`mad`] over every unordered pair of distinct labels, each
/// restricted to node pairs carrying exactly those two labels.
pub fn mad_tgt(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.nrows() {
        return Err(Error::Data(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let present: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if present.len() < 2 {
        return Err(Error::Contract("cross-label MAD needs at least two labels".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, &a) in present.iter().enumerate() {
        for &b in &present[k + 1..] {
            sum += mad(x, |i, j| {
                (labels[i] == a && labels[j] == b) || (labels[i] == b && labels[j] == a)
            })?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
