mod support;

use std::cell::Cell;

use grato::autodiff::Tape;
use grato::objective::LossConfig;
use grato::ops::{OpHyper, OpMode};
use grato::rng;
use grato::search::{
    arch_gradient, evaluate, loss_gradients, search_loop, train_model, AdamState, ArchGradConfig, Bilevel, Gradients, Order,
    Phase, SearchConfig, SupernetProblem,
};
use grato::supernet::{BlockSpec, DerivedArch, GcnStack, Model, NetShape, Network};
use grato::metrics::MadScope;
use grato::{generate_sbm, Graph, SbmConfig, Split};
use ndarray::Array2;
use support::{gaussian, random_graph, rng as test_rng};

fn small_setup(seed: u64) -> (Graph, NetShape, BlockSpec) {
    let graph = random_graph(16, 4, 0.3, seed);
    let shape = NetShape { in_dim: 4, hidden: 4, classes: 2, blocks: 2 };
    (graph, shape, BlockSpec { n_intermediate: 2, top_k: 2 })
}

#[test]
fn frozen_first_order_search_is_plain_supernet_training() {
    let (graph, shape, block) = small_setup(3);
    let menu = OpHyper::default().menu();
    let loss = LossConfig::default();
    let cfg = SearchConfig { max_epochs: 6, patience: 0, order: Order::First, freeze_arch: true, seed: 11, ..SearchConfig::default() };
    let outcome = search_loop(&graph, shape, block, &menu, &loss, &cfg).unwrap();

    let mut net = Network::supernet(shape, block, &menu, cfg.seed).unwrap();
    net.calibrate(&graph).unwrap();
    let mut state = AdamState::new(net.weights());
    for epoch in 0..cfg.max_epochs as u64 {
        let g = loss_gradients(&net, &graph, Split::Train, &loss, rng::derive(cfg.seed, 2 * epoch + 1)).unwrap();
        state.step(net.weights_mut(), &g.weights, &cfg.weight_adam());
    }
    assert_eq!(outcome.supernet.weights(), net.weights());
    assert!(outcome.supernet.arch().iter().all(|&v| v == 0.0));
}

struct Counting<'a, 'g> {
    inner: SupernetProblem<'g>,
    calls: &'a Cell<usize>,
}

impl Bilevel for Counting<'_, '_> {
    fn weights(&self) -> &[Array2<f64>] {
        self.inner.weights()
    }
    fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        self.inner.weights_mut()
    }
    fn gradients(&self, phase: Phase, sample: u64) -> grato::Result<Gradients> {
        self.calls.set(self.calls.get() + 1);
        self.inner.gradients(phase, sample)
    }
}

#[test]
fn arch_gradient_uses_constant_passes_and_restores_weights() {
    let (graph, shape, block) = small_setup(4);
    let mut net = Network::supernet(shape, block, &OpHyper::default().menu(), 2).unwrap();
    net.calibrate(&graph).unwrap();
    *net.arch_mut() = gaussian(net.arch().dim(), &mut test_rng(1));
    let before = net.weights().to_vec();
    let calls = Cell::new(0);
    let mut problem = Counting { inner: SupernetProblem { net, graph: &graph, loss: LossConfig::default() }, calls: &calls };
    for (order, expected) in [(Order::First, 1), (Order::Second, 4), (Order::PaperLiteral, 4)] {
        calls.set(0);
        let cfg = ArchGradConfig { order, xi: 0.01, epsilon_scale: 0.01 };
        let g = arch_gradient(&mut problem, &cfg, 7).unwrap();
        assert_eq!(calls.get(), expected, "{order:?}");
        assert_eq!(g.arch.dim(), problem.inner.net.arch().dim());
        assert_eq!(problem.weights(), &before[..], "{order:?} left weights changed");
    }
}

fn val_loss_after_virtual_step(net: &Network, graph: &Graph, loss: &LossConfig, xi: f64, sample: u64) -> f64 {
    let mut stepped = net.clone();
    let g = loss_gradients(&stepped, graph, Split::Train, loss, sample).unwrap();
    for (w, d) in stepped.weights_mut().iter_mut().zip(&g.weights) {
        *w = &*w - &(d * xi);
    }
    loss_gradients(&stepped, graph, Split::Val, loss, sample).unwrap().loss
}

#[test]
fn second_order_matches_the_unrolled_objective_on_a_supernet() {
    for seed in 0..3 {
        let (graph, shape, block) = small_setup(10 + seed);
        let loss = LossConfig::default();
        let mut net = Network::supernet(shape, block, &OpHyper::default().menu(), seed).unwrap();
        net.calibrate(&graph).unwrap();
        *net.arch_mut() = gaussian(net.arch().dim(), &mut test_rng(seed)) * 0.5;
        let xi = 0.05;
        let sample = 99 + seed;
        let numeric = grato::autodiff::gradcheck::numeric_gradient(net.arch(), 1e-5, |probe| {
            let mut n = net.clone();
            *n.arch_mut() = probe.clone();
            val_loss_after_virtual_step(&n, &graph, &loss, xi, sample)
        });
        let mut problem = SupernetProblem { net, graph: &graph, loss };
        let cfg = ArchGradConfig { order: Order::Second, xi, epsilon_scale: 1e-4 };
        let got = arch_gradient(&mut problem, &cfg, sample).unwrap().arch;
        let err = support::relative_error(&got, &numeric, support::GRAD_FLOOR);
        assert!(err < 1e-3, "seed {seed}: relative error {err:e}");
        let first = arch_gradient(&mut problem, &ArchGradConfig { order: Order::First, ..cfg }, sample).unwrap().arch;
        assert!(support::relative_error(&first, &numeric, support::GRAD_FLOOR) > err);
    }
}

#[test]
fn search_is_deterministic_and_block_list_improves() {
    let graph = generate_sbm(&SbmConfig { nodes_per_community: 80, seed: 5, ..SbmConfig::default() }).unwrap();
    let shape = NetShape { in_dim: graph.feature_dim(), hidden: 8, classes: 3, blocks: 2 };
    let block = BlockSpec { n_intermediate: 2, top_k: 2 };
    let cfg = SearchConfig { max_epochs: 8, seed: 5, ..SearchConfig::default() };
    let menu = OpHyper::default().menu();
    let a = search_loop(&graph, shape, block, &menu, &LossConfig::default(), &cfg).unwrap();
    let b = search_loop(&graph, shape, block, &menu, &LossConfig::default(), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.supernet.arch(), b.supernet.arch());
    assert_eq!(a.blocks.entries(), b.blocks.entries());
    assert!(!a.blocks.is_empty());
    for pair in a.blocks.entries().windows(2) {
        assert!(pair[1].score.score > pair[0].score.score);
        assert!(pair[1].epoch > pair[0].epoch);
    }
    for entry in a.blocks.entries() {
        entry.arch.validate().unwrap();
        let text = entry.arch.to_json();
        assert_eq!(DerivedArch::from_json(&text).unwrap(), entry.arch);
    }
    for w in a.supernet.alpha().rows() {
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_keeps_the_best_validation_weights() {
    let graph = generate_sbm(&SbmConfig { seed: 2, ..SbmConfig::default() }).unwrap();
    let mut model = GcnStack::new(graph.feature_dim(), 8, 3, 2, 4).unwrap();
    model.calibrate(&graph).unwrap();
    let cfg = SearchConfig { train_epochs: 40, patience: 10, seed: 4, ..SearchConfig::default() };
    let log = train_model(&mut model, &graph, &LossConfig { lambda_ovm: 0.0, ..LossConfig::default() }, &cfg).unwrap();
    let best = log.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    assert_eq!(log.best_val_accuracy, best);
    assert_eq!(log.epochs[log.best_epoch].val_accuracy, best);
    assert!(log.epochs.len() <= 40 && log.epochs.len() > log.best_epoch);
    let tape = Tape::new();
    let pass = model.forward(&tape, &graph, OpMode::eval()).unwrap();
    let pred = grato::metrics::predictions(&pass.probs.value());
    assert_eq!(grato::metrics::accuracy(&pred, graph.labels(), graph.mask(Split::Val)).unwrap(), best);
    let report = evaluate(&model, &graph, MadScope::All).unwrap();
    assert!(report.accuracy > 0.8, "accuracy {}", report.accuracy);
}

#[test]
fn eval_forward_is_deterministic() {
    let (graph, shape, block) = small_setup(6);
    let net = Network::supernet(shape, block, &OpHyper::default().menu(), 1).unwrap();
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = net.forward(&t1, &graph, OpMode::eval()).unwrap();
    let b = net.forward(&t2, &graph, OpMode::eval()).unwrap();
    assert_eq!(a.probs.value(), b.probs.value());
    assert_eq!(a.adjacency.mask(), b.adjacency.mask());
    let c = net.forward(&t1, &graph, OpMode::train(3)).unwrap();
    let d = net.forward(&t2, &graph, OpMode::train(3)).unwrap();
    assert_eq!(c.hidden.value(), d.hidden.value());
    assert!(c.adjacency.is_subset_of(&grato::ops::Adjacency::new(graph.adj())));
}
