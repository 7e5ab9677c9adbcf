//! DropEdge and the DropAttr family. Masks are sampled once per call and are
//! constants on the tape; nothing is rescaled after dropping.

use std::rc::Rc;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use super::Adjacency;
use crate::autodiff::Var;
use crate::error::Result;

/// `⌊rate · total⌋`, robust to representation error in `rate`.
pub fn drop_count(rate: f64, total: usize) -> usize {
    ((rate * total as f64) + 1e-9).floor() as usize
}

/// Mask that zeroes `⌊p·V⌋` of the `V` active entries, dropping both
/// directions of an undirected edge together (then `V` counts pairs).
pub fn sample_edge_mask(adj: &Adjacency, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mask = adj.mask();
    let units: Vec<usize> = (0..mask.len())
        .filter(|&e| mask[e] != 0.0)
        .filter(|&e| adj.partner(e).is_none_or(|q| e <= q))
        .collect();
    let mut out = mask.to_vec();
    for k in index::sample(rng, units.len(), drop_count(p, units.len())) {
        let e = units[k];
        out[e] = 0.0;
        if let Some(q) = adj.partner(e) {
            out[q] = 0.0;
        }
    }
    out
}

/// DropEdge. Identity outside training.
pub fn drop_edge(adj: &Adjacency, p: f64, training: bool, rng: &mut impl Rng) -> Adjacency {
    if !training || drop_count(p, adj.active_count()) == 0 {
        return adj.clone();
    }
    adj.with_mask(sample_edge_mask(adj, p, rng))
}

/// Zero `⌊rate·n⌋` uniformly chosen rows.
pub fn sample_row_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = Array2::ones(shape);
    for r in index::sample(rng, shape.0, drop_count(rate, shape.0)) {
        m.row_mut(r).fill(0.0);
    }
    m
}

/// Zero `⌊rate·d⌋` uniformly chosen columns.
pub fn sample_col_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = Array2::ones(shape);
    for c in index::sample(rng, shape.1, drop_count(rate, shape.1)) {
        m.column_mut(c).fill(0.0);
    }
    m
}

/// Zero `⌊p·V⌋` of the `V` nonzero entries of `x`.
pub fn sample_entry_mask(x: &Array2<f64>, p: f64, rng: &mut impl Rng) -> Array2<f64> {
    let nonzero: Vec<(usize, usize)> = x
        .indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut m = Array2::ones(x.dim());
    for k in index::sample(rng, nonzero.len(), drop_count(p, nonzero.len())) {
        m[nonzero[k]] = 0.0;
    }
    m
}

fn apply_mask<'t>(x: Var<'t>, mask: Array2<f64>) -> Result<Var<'t>> {
    x.mask(&Rc::new(mask))
}

pub fn drop_attr_rows<'t>(x: Var<'t>, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
    if !training || drop_count(rate, x.shape().0) == 0 {
        return Ok(x);
    }
    apply_mask(x, sample_row_mask(x.shape(), rate, rng))
}

pub fn drop_attr_cols<'t>(x: Var<'t>, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
    if !training || drop_count(rate, x.shape().1) == 0 {
        return Ok(x);
    }
    apply_mask(x, sample_col_mask(x.shape(), rate, rng))
}

pub fn drop_attr_entries<'t>(x: Var<'t>, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
    if !training || p == 0.0 {
        return Ok(x);
    }
    let mask = x.with_value(|v| sample_entry_mask(v, p, rng));
    apply_mask(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{SparseAdj, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_use_floor() {
        assert_eq!(drop_count(0.3, 20), 6);
        assert_eq!(drop_count(0.6, 10), 6);
        assert_eq!(drop_count(0.29, 100), 29);
        assert_eq!(drop_count(0.1, 9), 0);
    }

    #[test]
    fn rate_zero_and_eval_mode_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let adj = Adjacency::new(&SparseAdj::from_pairs(4, &[(0, 1), (1, 2), (2, 3)], true).unwrap());
        assert!(drop_edge(&adj, 0.0, true, &mut rng).ptr_eq(&adj));
        assert!(drop_edge(&adj, 0.9, false, &mut rng).ptr_eq(&adj));

        let tape = Tape::new();
        let x = tape.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 + 1.0));
        for out in [
            drop_attr_rows(x, 0.0, true, &mut rng).unwrap(),
            drop_attr_cols(x, 0.5, false, &mut rng).unwrap(),
            drop_attr_entries(x, 0.6, false, &mut rng).unwrap(),
        ] {
            assert_eq!(out.value(), x.value());
        }
    }

    #[test]
    fn dropped_edges_never_reappear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let adj = Adjacency::new(&SparseAdj::from_pairs(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], true).unwrap());
        let once = drop_edge(&adj, 0.4, true, &mut rng);
        let twice = drop_edge(&once, 0.5, true, &mut rng);
        assert!(twice.is_subset_of(&once) && once.is_subset_of(&adj));
        assert_eq!(once.active_count(), 6);
        assert_eq!(twice.active_count(), 4);
    }
}
