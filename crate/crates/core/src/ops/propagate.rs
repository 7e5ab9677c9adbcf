use super::Adjacency;
use crate::autodiff::Var;
use crate::error::{Error, Result};

fn check_rows(x: &Var<'_>, adj: &Adjacency, op: &'static str) -> Result<()> {
    if x.shape().0 != adj.num_nodes() {
        return Err(Error::Dimension {
            op,
            left: (adj.num_nodes(), adj.num_nodes()),
            right: x.shape(),
        });
    }
    Ok(())
}

/// `D̂^{-1/2} Â D̂^{-1/2} X Θ` with `Â = A + I`.
pub fn gcn<'t>(x: Var<'t>, adj: &Adjacency, theta: Var<'t>) -> Result<Var<'t>> {
    check_rows(&x, adj, "gcn")?;
    x.tape().spmm(&adj.gcn_operator(), x)?.matmul(theta)
}

/// `K` symmetric-normalized propagations followed by one linear map.
pub fn sgc<'t>(x: Var<'t>, adj: &Adjacency, theta: Var<'t>, k: usize) -> Result<Var<'t>> {
    if k == 0 {
        return Err(Error::Config("sgc needs k >= 1".into()));
    }
    check_rows(&x, adj, "sgc")?;
    let op = adj.gcn_operator();
    let mut h = x;
    for _ in 0..k {
        h = x.tape().spmm(&op, h)?;
    }
    h.matmul(theta)
}

/// GraphSAGE with the sum aggregator: `x_i W₁ + (Σ_{j∈N(i)} x_j) W₂`.
pub fn sage<'t>(x: Var<'t>, adj: &Adjacency, w_self: Var<'t>, w_neigh: Var<'t>) -> Result<Var<'t>> {
    check_rows(&x, adj, "sage")?;
    let agg = x.tape().spmm(&adj.open_operator(), x)?;
    x.matmul(w_self)?.add(agg.matmul(w_neigh)?)
}
