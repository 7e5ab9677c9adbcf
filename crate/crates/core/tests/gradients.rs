mod support;

use std::rc::Rc;

use grato::autodiff::{EdgeIndex, SparseAdj, Tape, Var};
use grato::objective::{cross_entropy, cross_entropy_logits, l_ovm, sample_pairs, total_loss, total_loss_logits, LossConfig};
use grato::ops::{self, Adjacency, OpHyper, OpMode};
use grato::supernet::{BlockSpec, Model, NetShape, Network};
use grato::Split;
use support::{gaussian, gradcheck, project, random_graph, relative_error, rng, FD_STEP, GRAD_FLOOR};

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

#[test]
fn every_operation_matches_finite_differences() {
    for seed in 0..SEEDS {
        let graph = random_graph(10, 3, 0.35, seed);
        let adj = Adjacency::new(graph.adj());
        for (key, op) in OpHyper::default().menu().into_iter().enumerate() {
            let mut r = rng(1000 + seed);
            let mut inputs = vec![graph.features().clone(), ops::glorot(3, 3, &mut r)];
            inputs.extend(op.init_weights(3, &mut r));
            if op == (grato::OpSpec::Agnn {}) {
                inputs[2][(0, 0)] = 0.7;
            }
            let mode = OpMode::train(seed);
            let err = gradcheck(&inputs, |_, v| {
                let (y, a) = op.forward(v[0], &adj, &v[2..], mode, key as u64)?;
                project(y, seed)?.add(project(ops::gcn(y, &a, v[1])?, seed + 1)?)
            });
            assert!(err < TOL, "{} seed {seed}: relative error {err:e}", op.kind());
        }
    }
}

#[test]
fn tape_primitives_match_finite_differences() {
    let graph = random_graph(8, 3, 0.4, 5);
    let sparse = Rc::new(graph.adj().with_self_loops().sym_normalized());
    let index = Rc::new(EdgeIndex::from_adj(&graph.adj().with_self_loops()));
    let segments: Rc<[usize]> = index.rows().clone();
    type Case = (&'static str, Box<dyn for<'t> Fn(&[Var<'t>]) -> grato::Result<Var<'t>>>);
    let cases: Vec<Case> = vec![
        ("matmul", Box::new(|v| v[0].matmul(v[1]))),
        ("spmm", Box::new({
            let s = sparse.clone();
            move |v| v[0].tape().spmm(&s, v[0])
        })),
        ("softmax_rows", Box::new(|v| Ok(v[0].softmax_rows()))),
        ("log_softmax_rows", Box::new(|v| Ok(v[0].log_softmax_rows()))),
        ("cosine_rows", Box::new(|v| v[0].cosine_rows(v[0].matmul(v[1])?))),
        ("l2_norm_rows", Box::new(|v| Ok(v[0].l2_norm_rows()))),
        ("center_cols", Box::new(|v| Ok(v[0].center_cols()))),
        ("exp_ln_sqrt_recip", Box::new(|v| Ok(v[0].mul(v[0])?.add_scalar(0.5).sqrt().recip().ln().exp()))),
        ("leaky_relu", Box::new(|v| Ok(v[0].leaky_relu(0.2)))),
        ("scale_by", Box::new(|v| v[0].scale_by(v[1].entry(0, 0)?))),
        ("gather_rows", Box::new(|v| v[0].gather_rows(&Rc::from(vec![3usize, 0, 3, 7])))),
        ("segment_softmax_edge_spmm", Box::new({
            let index = index.clone();
            let segments = segments.clone();
            move |v| {
                let x = v[0];
                let scores = x.gather_rows(index.rows())?.cosine_rows(x.gather_rows(index.cols())?)?;
                let w = x.tape().segment_softmax(scores.scale(2.0), &segments)?;
                x.tape().edge_spmm(&index, w, x)
            }
        })),
    ];
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let inputs = vec![gaussian((8, 3), &mut r), gaussian((3, 3), &mut r)];
        for (name, case) in &cases {
            let err = gradcheck(&inputs, |_, v| project(case(v)?, seed + 7));
            assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn losses_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let labels: Vec<usize> = (0..12).map(|i| (i * 7 + seed as usize) % 3).collect();
        let mask: Vec<usize> = (0..9).collect();
        let pairs = sample_pairs(&(0..12).collect::<Vec<_>>(), 40, &mut r).unwrap();
        let inputs = vec![gaussian((12, 3), &mut r), gaussian((12, 5), &mut r)];
        let cfg = LossConfig::default();
        let checks: [(&str, f64); 5] = [
            ("cross_entropy", gradcheck(&inputs[..1], |_, v| cross_entropy(v[0].softmax_rows(), &labels, &mask))),
            ("cross_entropy_logits", gradcheck(&inputs[..1], |_, v| cross_entropy_logits(v[0], &labels, &mask))),
            ("l_ovm", gradcheck(&inputs[1..], |_, v| l_ovm(v[0], &labels, &pairs))),
            ("total_loss", gradcheck(&inputs, |_, v| {
                Ok(total_loss(v[0].softmax_rows(), v[1], &labels, &mask, &pairs, &cfg)?.total)
            })),
            ("total_loss_logits", gradcheck(&inputs, |_, v| {
                Ok(total_loss_logits(v[0], v[1], &labels, &mask, &pairs, &cfg)?.total)
            })),
        ];
        for (name, err) in checks {
            assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

fn supernet_loss(net: &Network, graph: &grato::Graph, pairs: &[(usize, usize)], mode: OpMode, tape: &Tape) -> f64 {
    let pass = net.forward(tape, graph, mode).unwrap();
    total_loss(pass.probs, pass.hidden, graph.labels(), graph.mask(Split::Train), pairs, &LossConfig::default())
        .unwrap()
        .total
        .item()
}

#[test]
fn supernet_matches_finite_differences() {
    for seed in 0..SEEDS {
        let graph = random_graph(10, 3, 0.35, seed);
        let shape = NetShape { in_dim: 3, hidden: 3, classes: 2, blocks: 2 };
        let block = BlockSpec { n_intermediate: 2, top_k: 2 };
        let mut net = Network::supernet(shape, block, &OpHyper::default().menu(), seed).unwrap();
        net.calibrate(&graph).unwrap();
        *net.arch_mut() = gaussian(net.arch().dim(), &mut rng(seed + 50)) * 0.5;
        let mode = OpMode::train(seed);
        let pairs = sample_pairs(graph.mask(Split::Train), 30, &mut rng(seed + 60)).unwrap();

        let tape = Tape::new();
        let pass = net.forward(&tape, &graph, mode).unwrap();
        let loss = total_loss(pass.probs, pass.hidden, graph.labels(), graph.mask(Split::Train), &pairs, &LossConfig::default()).unwrap();
        tape.backward(loss.total).unwrap();
        let weight_grads = pass.weight_grads();
        let arch_grad = pass.arch_grad().unwrap();

        let numeric_arch = grato::autodiff::gradcheck::numeric_gradient(net.arch(), FD_STEP, |probe| {
            let mut probe_net = net.clone();
            *probe_net.arch_mut() = probe.clone();
            supernet_loss(&probe_net, &graph, &pairs, mode, &Tape::new())
        });
        let err = relative_error(&arch_grad, &numeric_arch, GRAD_FLOOR);
        assert!(err < TOL, "arch seed {seed}: relative error {err:e}");
        for (k, analytic) in weight_grads.iter().enumerate() {
            let numeric = grato::autodiff::gradcheck::numeric_gradient(&net.weights()[k], FD_STEP, |probe| {
                let mut probe_net = net.clone();
                probe_net.weights_mut()[k] = probe.clone();
                supernet_loss(&probe_net, &graph, &pairs, mode, &Tape::new())
            });
            let err = relative_error(analytic, &numeric, GRAD_FLOOR);
            assert!(err < TOL, "weight {k} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn sparse_adjacency_round_trip() {
    let adj = SparseAdj::from_pairs(4, &[(0, 1), (1, 2)], true).unwrap();
    assert_eq!(adj.to_dense().sum(), 4.0);
}
