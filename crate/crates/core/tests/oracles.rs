mod support;

use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use grato::autodiff::Tape;
use grato::metrics::{mad_all, mad_tgt};
use grato::ops::{self, Adjacency, OpHyper, OpMode, OpSpec};
use grato::search::{arch_gradient, ArchGradConfig, Bilevel, Order};
use grato::supernet::{derive_architecture, BlockSpec};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use support::{brute_derive, brute_mad, brute_mad_tgt, gaussian, random_graph, rng, Quadratic};

fn dense_adj(graph: &grato::Graph) -> Array2<f64> {
    graph.adj().to_dense()
}

fn dense_gcn_operator(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let a_hat = a + &Array2::<f64>::eye(n);
    let d: Array1<f64> = a_hat.sum_axis(Axis(1)).mapv(|v| 1.0 / v.sqrt());
    Array2::from_shape_fn((n, n), |(i, j)| d[i] * a_hat[(i, j)] * d[j])
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Row softmax of `scores` restricted to the closed neighbourhood in `a`.
fn closed_softmax(a: &Array2<f64>, scores: impl Fn(usize, usize) -> f64) -> Array2<f64> {
    let n = a.nrows();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let hood: Vec<usize> = (0..n).filter(|&j| j == i || a[(i, j)] != 0.0).collect();
        let s: Vec<f64> = hood.iter().map(|&j| scores(i, j)).collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
        for (&j, v) in hood.iter().zip(&s) {
            p[(i, j)] = (v - max).exp() / z;
        }
    }
    p
}

fn cos(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

#[test]
fn propagation_ops_equal_dense_formulas() {
    for seed in 0..10 {
        let graph = random_graph(12, 4, 0.3, seed);
        let a = dense_adj(&graph);
        let x = graph.features().clone();
        let adj = Adjacency::new(graph.adj());
        let mut r = rng(seed);
        let s = dense_gcn_operator(&a);
        for op in OpHyper::default().menu().into_iter().filter(|o| o.kind().is_propagation()) {
            let w = op.init_weights(4, &mut r);
            let tape = Tape::new();
            let vars: Vec<_> = w.iter().map(|m| tape.constant(m.clone())).collect();
            let (out, _) = op.forward(tape.constant(x.clone()), &adj, &vars, OpMode::eval(), 0).unwrap();
            let expected = match op {
                OpSpec::Gcn {} => s.dot(&x).dot(&w[0]),
                OpSpec::Sgc { k } => (0..k).fold(x.clone(), |h, _| s.dot(&h)).dot(&w[0]),
                OpSpec::Sage {} => x.dot(&w[0]) + a.dot(&x).dot(&w[1]),
                OpSpec::Gat { slope } => {
                    let h = x.dot(&w[0]);
                    let dst = h.dot(&w[1]);
                    let src = h.dot(&w[2]);
                    closed_softmax(&a, |i, j| leaky(dst[(i, 0)] + src[(j, 0)], slope)).dot(&h)
                }
                OpSpec::Agnn {} => closed_softmax(&a, |i, j| w[0][(0, 0)] * cos(x.row(i), x.row(j))).dot(&x),
                _ => unreachable!(),
            };
            let err = (&out.value() - &expected).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
            assert!(err < 1e-12, "{} seed {seed}: {err:e}", op.kind());
        }
    }
}

#[test]
fn mad_equals_brute_force() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let mut x = gaussian((16, 5), &mut r);
        if seed % 2 == 1 {
            x.mapv_inplace(|v| v.max(0.0));
            x.row_mut(3).fill(0.0);
        }
        let labels: Vec<usize> = (0..16).map(|_| r.random_range(0..3)).collect();
        assert_abs_diff_eq!(mad_all(&x).unwrap(), brute_mad(&x), epsilon = 1e-10);
        if labels.iter().collect::<BTreeSet<_>>().len() >= 2 {
            assert_abs_diff_eq!(mad_tgt(&x, &labels).unwrap(), brute_mad_tgt(&x, &labels), epsilon = 1e-10);
        }
    }
}

#[test]
fn quadratic_hypergradient() {
    for seed in 0..20 {
        let mut q = Quadratic::random(6, 3, seed);
        let before = q.weights().to_vec();
        let xi = 0.05;
        let cfg = ArchGradConfig { order: Order::Second, xi, epsilon_scale: 0.01 };
        let got = arch_gradient(&mut q, &cfg, 0).unwrap().arch;
        let want = q.unrolled_hypergradient(xi);
        let rel = (&got - &want).mapv(|v| v * v).sum().sqrt() / want.mapv(|v| v * v).sum().sqrt();
        assert!(rel < 1e-6, "seed {seed}: {rel:e}");
        assert_eq!(q.weights(), &before[..], "weights must be restored bitwise");

        let first = arch_gradient(&mut q, &ArchGradConfig { order: Order::First, ..cfg }, 0).unwrap().arch;
        assert_eq!(first, q.val_arch_grad());
    }
}

#[test]
fn paper_literal_scales_the_difference_by_one_half() {
    let mut q = Quadratic::random(5, 2, 9);
    let cfg = ArchGradConfig { order: Order::Second, xi: 0.1, epsilon_scale: 0.01 };
    let second = arch_gradient(&mut q, &cfg, 0).unwrap().arch;
    let literal = arch_gradient(&mut q, &ArchGradConfig { order: Order::PaperLiteral, ..cfg }, 0).unwrap().arch;
    // with ε = c/‖v‖ the two corrections differ by the factor ξ/ε
    let train = q.gradients(grato::search::Phase::Train, 0).unwrap();
    let mut stepped = Quadratic::random(5, 2, 9);
    stepped.omega[0] = &q.omega[0] - &(&train.weights[0] * cfg.xi);
    let v = stepped.gradients(grato::search::Phase::Val, 0).unwrap();
    let eps = cfg.epsilon_scale / v.weights[0].mapv(|t| t * t).sum().sqrt();
    let correction_second = &second - &v.arch;
    let correction_literal = &literal - &v.arch;
    let ratio = &correction_second / &correction_literal;
    for r in ratio.iter() {
        assert_abs_diff_eq!(*r, cfg.xi / eps, epsilon = 1e-6 * cfg.xi / eps);
    }
}

#[test]
fn derivation_equals_brute_force_and_ignores_edge_shifts() {
    let menu = OpHyper::default().menu();
    for draw in 0..200u64 {
        let mut r = rng(draw);
        let spec = BlockSpec { n_intermediate: 1 + (draw as usize % 4), top_k: 1 + (draw as usize % 3) };
        let lambda = gaussian((spec.num_edges(), menu.len()), &mut r) * 2.0;
        let arch = derive_architecture(&lambda, &menu, &spec, 1, 8).unwrap();
        let oracle = brute_derive(&lambda, spec.n_intermediate, spec.top_k);
        for (choice, want) in arch.nodes.iter().zip(&oracle) {
            let got: Vec<(usize, usize)> = choice
                .keep
                .iter()
                .map(|k| (k.from, menu.iter().position(|m| *m == k.op).unwrap()))
                .collect();
            assert_eq!(&got, want, "draw {draw}");
        }
        let mut shifted = lambda.clone();
        for mut row in shifted.rows_mut() {
            let c: f64 = r.random_range(-5.0..5.0);
            row.mapv_inplace(|v| v + c);
        }
        assert_eq!(derive_architecture(&shifted, &menu, &spec, 1, 8).unwrap(), arch, "draw {draw}");
    }
}

#[test]
fn drop_operations_remove_exact_counts() {
    for seed in 0..100u64 {
        let graph = random_graph(20, 6, 0.3, seed);
        let adj = Adjacency::new(graph.adj());
        let undirected = graph.adj().nnz() / 2;
        let dropped = ops::drop_edge(&adj, 0.3, true, &mut rng(seed));
        let removed = undirected - dropped.active_count() / 2;
        assert_eq!(removed, (0.3 * undirected as f64 + 1e-9).floor() as usize, "seed {seed}");
        assert!(dropped.is_subset_of(&adj));
        let m = dropped.mask();
        for e in 0..m.len() {
            if let Some(q) = adj.partner(e) {
                assert_eq!(m[e], m[q], "undirected pair split at seed {seed}");
            }
        }

        let tape = Tape::new();
        let mut x = graph.features().clone();
        x.mapv_inplace(|v| if v.abs() < 0.3 { 0.0 } else { v });
        let nonzero = x.iter().filter(|&&v| v != 0.0).count();
        let xv = tape.constant(x.clone());
        let out = ops::drop_attr_entries(xv, 0.6, true, &mut rng(seed)).unwrap().value();
        let zeroed = out.iter().zip(&x).filter(|(o, i)| **o == 0.0 && **i != 0.0).count();
        assert_eq!(zeroed, (0.6 * nonzero as f64 + 1e-9).floor() as usize, "seed {seed}");
        assert!(out.iter().zip(&x).all(|(o, i)| *o == 0.0 || o == i), "no rescaling");

        let rows = ops::drop_attr_rows(xv, 0.1, true, &mut rng(seed)).unwrap().value();
        let zero_rows = (0..20).filter(|&i| rows.row(i).iter().all(|&v| v == 0.0) && x.row(i).iter().any(|&v| v != 0.0)).count();
        assert_eq!(zero_rows, 2);
        let cols = ops::drop_attr_cols(xv, 0.5, true, &mut rng(seed)).unwrap().value();
        let zero_cols = (0..6).filter(|&j| cols.column(j).iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero_cols, 3);

        let hyper = OpHyper::default();
        for op in hyper.menu().into_iter().filter(|o| o.kind().is_stochastic()) {
            let (y, a) = op.forward(xv, &adj, &[], OpMode::eval(), seed).unwrap();
            assert_eq!(y.value(), x);
            assert_eq!(a.mask(), adj.mask());
        }
    }
}

#[test]
fn pairnorm_postconditions() {
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n = r.random_range(2..30);
        let d = r.random_range(1..8);
        let scale: f64 = r.random_range(0.01..100.0);
        let s: f64 = r.random_range(0.1..5.0);
        let x = gaussian((n, d), &mut r) * scale + r.random_range(-10.0..10.0);
        let tape = Tape::new();
        let out = ops::pairnorm(tape.constant(x), s).unwrap().value();
        for m in out.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-10, "seed {seed}: column mean {m:e}");
        }
        let msq = out.mapv(|v| v * v).sum() / n as f64;
        assert!((msq - s * s).abs() < 1e-8, "seed {seed}: {msq} vs {}", s * s);
    }
}
