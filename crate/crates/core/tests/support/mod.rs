//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use grato::autodiff::gradcheck::numeric_gradient;
use grato::autodiff::{SparseAdj, Tape, Var};
use grato::search::{Bilevel, Gradients, Phase};
use grato::{Graph, Result};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Gradient norm below which relative error is measured against this value
/// instead: central differences at `FD_STEP` carry roundoff of order
/// `1e-16 · |loss| / FD_STEP ≈ 1e-11`, so smaller gradients cannot be
/// resolved to 1e-4 relative accuracy.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Small random undirected graph with two classes and every mask filled.
pub fn random_graph(n: usize, d: usize, p: f64, seed: u64) -> Graph {
    assert!(n >= 6);
    let mut r = rng(seed);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    let adj = SparseAdj::from_pairs(n, &pairs, true).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let train: Vec<usize> = (0..n / 2).collect();
    let val: Vec<usize> = (n / 2..n / 2 + n / 4).collect();
    let test: Vec<usize> = (n / 2 + n / 4..n).collect();
    Graph::new(gaussian((n, d), &mut r), labels, 2, adj, &train, &val, &test).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`, the tensor-wise relative error.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let na = a.mapv(|v| v * v).sum().sqrt();
    let nb = b.mapv(|v| v * v).sum().sqrt();
    diff / na.max(nb).max(floor)
}

/// Largest relative error between the tape gradient and central
/// differences of `f` over every input tensor.
pub fn gradcheck<F>(inputs: &[Array2<f64>], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let analytic: Vec<Array2<f64>> = vars.iter().map(|v| v.grad()).collect();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(x, FD_STEP, |probe| {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(m, v)| tape.param(if m == k { probe.clone() } else { v.clone() }))
                .collect();
            f(&tape, &vars).unwrap().item()
        });
        worst = worst.max(relative_error(&analytic[k], &numeric, GRAD_FLOOR));
    }
    worst
}

/// `Σ R ⊙ x` for a fixed random `R`, turning a matrix output into a scalar
/// whose gradient is not constant.
pub fn project<'t>(x: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let r = gaussian(x.shape(), &mut rng(seed));
    Ok(x.mul(x.tape().constant(r))?.sum())
}

/// Cosine distance matrix by normalized Gram product.
pub fn distance_matrix(x: &Array2<f64>) -> Array2<f64> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let n = x.nrows();
    let gram = x.dot(&x.t());
    Array2::from_shape_fn((n, n), |(i, j)| match (norms[i] > 0.0, norms[j] > 0.0) {
        (true, true) => 1.0 - gram[(i, j)] / (norms[i] * norms[j]),
        (false, false) => 0.0,
        _ => 1.0,
    })
}

/// All-pairs MAD by explicit double loop over the distance matrix.
pub fn brute_mad(x: &Array2<f64>) -> f64 {
    let d = distance_matrix(x);
    let n = x.nrows();
    let per_node: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| d[(i, j)]).sum::<f64>() / (n - 1) as f64)
        .collect();
    100.0 * per_node.iter().sum::<f64>() / n as f64
}

/// Cross-label MAD by enumerating label pairs and their member nodes.
pub fn brute_mad_tgt(x: &Array2<f64>, labels: &[usize]) -> f64 {
    let d = distance_matrix(x);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut values = Vec::new();
    for (k, &a) in classes.iter().enumerate() {
        for &b in &classes[k + 1..] {
            let members_a: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a).collect();
            let members_b: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == b).collect();
            let mut rows = Vec::new();
            for &i in &members_a {
                rows.push(members_b.iter().map(|&j| d[(i, j)]).sum::<f64>() / members_b.len() as f64);
            }
            for &j in &members_b {
                rows.push(members_a.iter().map(|&i| d[(j, i)]).sum::<f64>() / members_a.len() as f64);
            }
            values.push(100.0 * rows.iter().sum::<f64>() / rows.len() as f64);
        }
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Quadratic bilevel toy with closed-form hypergradient:
///
/// `L_train(ω, α) = ½ ωᵀAω − ωᵀBα`,
/// `L_val(ω, α) = ½ ‖ω − Pα − t‖² + ½ αᵀCα`,
///
/// with `A`, `C` symmetric positive definite.
pub struct Quadratic {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub p: Array2<f64>,
    pub c: Array2<f64>,
    pub t: Array2<f64>,
    pub alpha: Array2<f64>,
    pub omega: Vec<Array2<f64>>,
}

fn spd(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let m = gaussian((n, n), rng);
    m.dot(&m.t()) / n as f64 + Array2::<f64>::eye(n)
}

impl Quadratic {
    pub fn random(m: usize, k: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        Quadratic {
            a: spd(m, &mut r),
            b: gaussian((m, k), &mut r),
            p: gaussian((m, k), &mut r),
            c: spd(k, &mut r),
            t: gaussian((m, 1), &mut r),
            alpha: gaussian((k, 1), &mut r),
            omega: vec![gaussian((m, 1), &mut r)],
        }
    }

    fn val_residual(&self, omega: &Array2<f64>) -> Array2<f64> {
        omega - &self.p.dot(&self.alpha) - &self.t
    }

    /// `∇_α L_val(ω, α)` at the stored `ω`.
    pub fn val_arch_grad(&self) -> Array2<f64> {
        self.c.dot(&self.alpha) - self.p.t().dot(&self.val_residual(&self.omega[0]))
    }

    /// `d/dα L_val(ω − ξ ∇_ω L_train(ω, α), α)`, by the chain rule.
    pub fn unrolled_hypergradient(&self, xi: f64) -> Array2<f64> {
        let omega = &self.omega[0];
        let inner = self.a.dot(omega) - self.b.dot(&self.alpha);
        let stepped = omega - &(inner * xi);
        let r = self.val_residual(&stepped);
        // ∂ω'/∂α = ξB
        self.c.dot(&self.alpha) - self.p.t().dot(&r) + self.b.t().dot(&r) * xi
    }
}

impl Bilevel for Quadratic {
    fn weights(&self) -> &[Array2<f64>] {
        &self.omega
    }

    fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.omega
    }

    fn gradients(&self, phase: Phase, _sample: u64) -> Result<Gradients> {
        let omega = &self.omega[0];
        Ok(match phase {
            Phase::Train => {
                let a_omega = self.a.dot(omega);
                let b_alpha = self.b.dot(&self.alpha);
                Gradients {
                    loss: 0.5 * omega.t().dot(&a_omega)[(0, 0)] - omega.t().dot(&b_alpha)[(0, 0)],
                    weights: vec![&a_omega - &b_alpha],
                    arch: -self.b.t().dot(omega),
                }
            }
            Phase::Val => {
                let r = self.val_residual(omega);
                Gradients {
                    loss: 0.5 * r.mapv(|v| v * v).sum() + 0.5 * self.alpha.t().dot(&self.c.dot(&self.alpha))[(0, 0)],
                    weights: vec![r.clone()],
                    arch: self.val_arch_grad(),
                }
            }
        })
    }
}

/// Brute-force derivation: score every `(from, op)` candidate of a node by
/// `exp(λ) / Σ exp(λ)` over its edge, sort by score then from then op, and
/// keep the first `top_k`.
pub fn brute_derive(lambda: &Array2<f64>, n_intermediate: usize, top_k: usize) -> Vec<Vec<(usize, usize)>> {
    let mut row = 0;
    let mut out = Vec::new();
    for j in 2..2 + n_intermediate {
        let mut cands = Vec::new();
        for from in 0..j {
            let z: f64 = lambda.row(row).iter().map(|v| v.exp()).sum();
            for (k, v) in lambda.row(row).iter().enumerate() {
                cands.push((v.exp() / z, from, k));
            }
            row += 1;
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out.push(cands.into_iter().take(top_k).map(|(_, f, k)| (f, k)).collect());
    }
    out
}
