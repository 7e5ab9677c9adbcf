use super::Adjacency;
use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Single-head attention coefficients over closed neighbourhoods, one per
/// entry of [`Adjacency::closed_index`]:
/// `softmax_j LeakyReLU(a_dstᵀ h_i + a_srcᵀ h_j)` with `h = XΘ`.
pub fn gat_attention<'t>(
    h: Var<'t>,
    adj: &Adjacency,
    a_dst: Var<'t>,
    a_src: Var<'t>,
    slope: f64,
) -> Result<Var<'t>> {
    let index = adj.closed_index();
    let to_dst = h.matmul(a_dst)?.gather_rows(index.rows())?;
    let from_src = h.matmul(a_src)?.gather_rows(index.cols())?;
    let scores = to_dst.add(from_src)?.leaky_relu(slope);
    h.tape().segment_softmax(scores, index.rows())
}

/// `x′_i = Σ_{j∈N(i)∪{i}} α_ij Θx_j`.
pub fn gat<'t>(
    x: Var<'t>,
    adj: &Adjacency,
    theta: Var<'t>,
    a_dst: Var<'t>,
    a_src: Var<'t>,
    slope: f64,
) -> Result<Var<'t>> {
    check(&x, adj, "gat")?;
    let h = x.matmul(theta)?;
    let alpha = gat_attention(h, adj, a_dst, a_src, slope)?;
    x.tape().edge_spmm(&adj.closed_index(), alpha, h)
}

/// AGNN propagation weights `P_ij ∝ exp(β·cos(x_i, x_j))` over closed
/// neighbourhoods.
pub fn agnn_propagation<'t>(x: Var<'t>, adj: &Adjacency, beta: Var<'t>) -> Result<Var<'t>> {
    let index = adj.closed_index();
    let xi = x.gather_rows(index.rows())?;
    let xj = x.gather_rows(index.cols())?;
    let scores = xi.cosine_rows(xj)?.scale_by(beta)?;
    x.tape().segment_softmax(scores, index.rows())
}

/// `X′ = P X`.
pub fn agnn<'t>(x: Var<'t>, adj: &Adjacency, beta: Var<'t>) -> Result<Var<'t>> {
    check(&x, adj, "agnn")?;
    let p = agnn_propagation(x, adj, beta)?;
    x.tape().edge_spmm(&adj.closed_index(), p, x)
}

fn check(x: &Var<'_>, adj: &Adjacency, op: &'static str) -> Result<()> {
    if x.shape().0 != adj.num_nodes() {
        return Err(Error::Dimension {
            op,
            left: (adj.num_nodes(), adj.num_nodes()),
            right: x.shape(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{SparseAdj, Tape};
    use ndarray::{array, Array2};

    #[test]
    fn gat_single_node_is_linear_map() {
        let tape = Tape::new();
        let adj = Adjacency::new(&SparseAdj::empty(1));
        let x = tape.constant(array![[1.0, 2.0]]);
        let th = tape.constant(array![[1.0, 1.0], [0.0, 3.0]]);
        let a = tape.constant(array![[0.3], [-0.7]]);
        let out = gat(x, &adj, th, a, a, 0.2).unwrap();
        assert_eq!(out.value(), array![[1.0, 7.0]]);
    }

    #[test]
    fn gat_zero_attention_vector_averages_neighbourhood() {
        let tape = Tape::new();
        let adj = Adjacency::new(&SparseAdj::from_pairs(3, &[(0, 1), (0, 2)], true).unwrap());
        let x = tape.constant(array![[3.0], [6.0], [0.0]]);
        let th = tape.constant(array![[1.0]]);
        let zero = tape.constant(Array2::zeros((1, 1)));
        let out = gat(x, &adj, th, zero, zero, 0.2).unwrap().value();
        assert!((out[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((out[(1, 0)] - 4.5).abs() < 1e-12);
        assert!((out[(2, 0)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn agnn_zero_beta_is_uniform_and_single_node_identity() {
        let tape = Tape::new();
        let adj = Adjacency::new(&SparseAdj::from_pairs(3, &[(0, 1), (1, 2)], true).unwrap());
        let x = tape.constant(array![[1.0, 0.0], [0.0, 3.0], [2.0, 2.0]]);
        let beta = tape.constant(array![[0.0]]);
        let p = agnn_propagation(x, &adj, beta).unwrap().value();
        let idx = adj.closed_index();
        for (e, (r, _)) in idx.iter().enumerate() {
            let deg = idx.iter().filter(|&(rr, _)| rr == r).count() as f64;
            assert!((p[(e, 0)] - 1.0 / deg).abs() < 1e-15);
        }

        let lone = Adjacency::new(&SparseAdj::empty(1));
        let x1 = tape.constant(array![[4.0, -1.0]]);
        let out = agnn(x1, &lone, tape.constant(array![[1.0]])).unwrap();
        assert_eq!(out.value(), array![[4.0, -1.0]]);
    }
}
