//! The subcommands, split into computation (`run_*`) and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use grato::metrics::{self, integrative_rank, EvalReport, MadScope, MethodScores, ProbeConfig, RankTable};
use grato::search::{evaluate, retrain_derived, search_loop, train_model, BlockList, EpochLog, TrainLog};
use grato::supernet::{DerivedArch, GcnStack, Model, NetShape, Network};
use grato::{Graph, SbmConfig};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{read_document, Provenance, RunConfig};
use crate::error::{CliError, CliResult};

/// An artifact body with its provenance record alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    #[serde(flatten)]
    pub body: T,
    pub provenance: Provenance,
}

/// Everything needed to rebuild a trained discrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub arch: DerivedArch,
    pub in_dim: usize,
    pub num_classes: usize,
    pub mad_scope: MadScope,
    pub weights: Vec<Array2<f64>>,
}

impl ModelArtifact {
    pub fn from_network(net: &Network, mad_scope: MadScope) -> Self {
        let shape = net.shape();
        ModelArtifact {
            arch: net.architecture(),
            in_dim: shape.in_dim,
            num_classes: shape.classes,
            mad_scope,
            weights: net.weights().to_vec(),
        }
    }

    pub fn network(&self) -> CliResult<Network> {
        let mut net = Network::discrete(&self.arch, self.in_dim, self.num_classes, 0)?;
        net.set_weights(self.weights.clone())?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_mad: f64,
    /// `(epoch, score)` of every block list entry.
    pub list: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl From<&TrainLog> for TrainSummary {
    fn from(log: &TrainLog) -> Self {
        TrainSummary {
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_val_accuracy: log.best_val_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub layers: usize,
    pub training: TrainSummary,
    pub report: EvalReport,
}

/// Contents of `report.json` for `search` and `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub blocks: usize,
    pub effective_depth: usize,
    pub search: Option<SearchSummary>,
    pub training: TrainSummary,
    pub test: EvalReport,
    pub baseline: Option<BaselineReport>,
    pub rank: Option<RankTable>,
}

pub struct TrainRun {
    pub arch: DerivedArch,
    pub network: Network,
    pub log: TrainLog,
    pub report: RunReport,
}

pub struct SearchRun {
    pub blocks: BlockList,
    pub log: Vec<EpochLog>,
    pub train: TrainRun,
}

fn scores(name: &str, r: &EvalReport) -> MethodScores {
    MethodScores::new(name, r.accuracy, r.macro_f1, r.mad)
}

/// Retrain `arch` (resized to `retrain_depth` when set), then the baseline.
pub fn run_train(arch: &DerivedArch, graph: &Graph, cfg: &RunConfig) -> CliResult<TrainRun> {
    let mut arch = arch.clone();
    if let Some(depth) = cfg.retrain_depth {
        arch.blocks = arch.blocks_for_depth(depth);
    }
    let trained = retrain_derived(&arch, graph, &cfg.loss, &cfg.search)?;
    let depth = arch.effective_depth();
    let baseline = if cfg.baseline.enabled {
        let layers = depth.max(1);
        let seed = grato::rng::derive(cfg.seed, 1);
        let mut model = GcnStack::new(graph.feature_dim(), arch.hidden_dim, graph.num_classes(), layers, seed)?;
        model.calibrate(graph)?;
        let log = train_model(&mut model, graph, &cfg.baseline_loss(), &cfg.search)?;
        Some(BaselineReport {
            layers,
            training: TrainSummary::from(&log),
            report: evaluate(&model, graph, cfg.search.mad_scope)?,
        })
    } else {
        None
    };
    let rank = match &baseline {
        Some(b) => Some(integrative_rank(&[
            scores("grato", &trained.report),
            scores(&format!("gcn-{}", b.layers), &b.report),
        ])?),
        None => None,
    };
    let report = RunReport {
        blocks: arch.blocks,
        effective_depth: depth,
        search: None,
        training: TrainSummary::from(&trained.log),
        test: trained.report,
        baseline,
        rank,
    };
    Ok(TrainRun {
        arch,
        network: trained.network,
        log: trained.log,
        report,
    })
}

/// Search, pick the last block list entry, and retrain it.
pub fn run_search(cfg: &RunConfig) -> CliResult<SearchRun> {
    let graph = cfg.graph()?;
    let shape = NetShape {
        in_dim: graph.feature_dim(),
        hidden: cfg.hidden_dim,
        classes: graph.num_classes(),
        blocks: cfg.blocks,
    };
    let outcome = search_loop(&graph, shape, cfg.block, &cfg.ops.menu(), &cfg.loss, &cfg.search)?;
    let best = outcome
        .blocks
        .best()
        .ok_or_else(|| CliError::Config("search ran no epochs, so no architecture was derived (search.max_epochs = 0)".into()))?;
    log::info!(
        "search: {} epochs, {} blocks kept, best at epoch {} (val acc {:.4})",
        outcome.log.len(),
        outcome.blocks.len(),
        best.epoch,
        best.score.accuracy
    );
    let mut train = run_train(&best.arch, &graph, cfg)?;
    train.report.search = Some(SearchSummary {
        epochs_run: outcome.log.len(),
        best_epoch: best.epoch,
        best_val_accuracy: best.score.accuracy,
        best_val_mad: best.score.mad,
        list: outcome.blocks.entries().iter().map(|e| (e.epoch, e.score.score)).collect(),
    });
    Ok(SearchRun {
        blocks: outcome.blocks,
        log: outcome.log,
        train,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn jsonl<T: Serialize>(provenance: &Provenance, rows: &[T]) -> String {
    let mut out = serde_json::to_string(&serde_json::json!({ "provenance": provenance })).expect("serializes");
    out.push('\n');
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("log row serializes"));
        out.push('\n');
    }
    out
}

fn write_train(run: &TrainRun, dir: &Path, provenance: &Provenance, scope: MadScope) -> CliResult<()> {
    write(
        &dir.join("report.json"),
        pretty(&Stamped {
            body: &run.report,
            provenance: provenance.clone(),
        }),
    )?;
    write(
        &dir.join("model.json"),
        pretty(&Stamped {
            body: ModelArtifact::from_network(&run.network, scope),
            provenance: provenance.clone(),
        }),
    )?;
    if let Some(rank) = &run.report.rank {
        write(&dir.join("rank.csv"), rank.to_csv()?)?;
    }
    Ok(())
}

/// Files written by `search`.
pub const SEARCH_OUTPUTS: [&str; 5] = ["arch.json", "log.jsonl", "report.json", "model.json", "rank.csv"];

pub fn cmd_search(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let run = run_search(cfg)?;
    let provenance = Provenance::new("search", cfg.seed, cfg);
    write(
        &dir.join("arch.json"),
        pretty(&Stamped {
            body: &run.train.arch,
            provenance: provenance.clone(),
        }),
    )?;
    write(&dir.join("log.jsonl"), jsonl(&provenance, &run.log))?;
    write_train(&run.train, &dir, &provenance, cfg.search.mad_scope)?;
    print_summary(&run.train.report);
    Ok(dir)
}

pub fn cmd_train(arch_path: &Path, cfg: &RunConfig) -> CliResult<PathBuf> {
    let text = fs::read_to_string(arch_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", arch_path.display())))?;
    let arch = DerivedArch::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", arch_path.display())))?;
    let graph = cfg.graph()?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let run = run_train(&arch, &graph, cfg)?;
    let provenance = Provenance::new("train", cfg.seed, cfg);
    write(&dir.join("log.jsonl"), jsonl(&provenance, &run.log.epochs))?;
    write_train(&run, &dir, &provenance, cfg.search.mad_scope)?;
    print_summary(&run.report);
    Ok(dir)
}

fn print_summary(report: &RunReport) {
    println!(
        "test accuracy {:.4}  macro-F1 {:.4}  MAD {:.2}  (blocks {}, depth {})",
        report.test.accuracy, report.test.macro_f1, report.test.mad, report.blocks, report.effective_depth
    );
    if let Some(rank) = &report.rank {
        print!("{}", rank.to_text());
    }
}

#[derive(Debug, Clone, Serialize)]
struct EvalInputs<'a> {
    model: &'a Path,
    graph: &'a Path,
}

/// Score a saved model on a graph file.
pub fn run_eval(model: &ModelArtifact, graph: &Graph) -> CliResult<EvalReport> {
    if graph.feature_dim() != model.in_dim {
        return Err(CliError::Config(format!(
            "graph has feature_dim {}, model expects {}",
            graph.feature_dim(),
            model.in_dim
        )));
    }
    if graph.num_classes() != model.num_classes {
        return Err(CliError::Config(format!(
            "graph has {} classes, model predicts {}",
            graph.num_classes(),
            model.num_classes
        )));
    }
    Ok(evaluate(&model.network()?, graph, model.mad_scope)?)
}

pub fn cmd_eval(model_path: &Path, graph_path: &Path, out: &Path) -> CliResult<PathBuf> {
    let model: ModelArtifact = read_document(model_path)?;
    let graph = grato::load_graph(graph_path).map_err(|e| CliError::Config(e.to_string()))?;
    let report = run_eval(&model, &graph)?;
    create_dir(out)?;
    let inputs = EvalInputs {
        model: model_path,
        graph: graph_path,
    };
    let provenance = Provenance::new("eval", 0, &inputs);
    write(&out.join("report.json"), pretty(&Stamped { body: &report, provenance }))?;
    println!("test accuracy {:.4}  macro-F1 {:.4}  MAD {:.2}", report.accuracy, report.macro_f1, report.mad);
    Ok(out.to_path_buf())
}

/// Smoothness and probe scores of a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub nodes: usize,
    pub mad: f64,
    pub mad_tgt: Option<f64>,
    pub pair_probe_auc: Option<f64>,
}

pub fn run_metrics(x: &Array2<f64>, labels: Option<&[usize]>, probe_seed: Option<u64>) -> CliResult<EmbeddingReport> {
    if let Some(l) = labels {
        if l.len() != x.nrows() {
            return Err(CliError::Config(format!("{} labels for {} embeddings", l.len(), x.nrows())));
        }
    }
    let distinct = labels.map_or(0, |l| l.iter().collect::<std::collections::BTreeSet<_>>().len());
    let mad_tgt = match labels {
        Some(l) if distinct >= 2 => Some(metrics::mad_tgt(x, l)?),
        _ => None,
    };
    let pair_probe_auc = match (labels, probe_seed) {
        (Some(l), Some(seed)) => Some(metrics::pair_probe_auc(x, l, &ProbeConfig::for_nodes(x.nrows()), seed)?),
        (None, Some(_)) => return Err(CliError::Config("the pair probe needs labels".into())),
        _ => None,
    };
    Ok(EmbeddingReport {
        nodes: x.nrows(),
        mad: metrics::mad_all(x)?,
        mad_tgt,
        pair_probe_auc,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_matrix(rows: Vec<Vec<f64>>) -> CliResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config("embeddings must be a nonempty rectangular array".into()));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
struct MetricsInputs<'a> {
    embeddings: Option<&'a Path>,
    labels: Option<&'a Path>,
    scores: Option<&'a Path>,
    probe_seed: Option<u64>,
}

/// `embeddings` is a JSON array of rows, `labels` a JSON array of class
/// indices, `scores` a JSON array of method scores to rank.
pub fn cmd_metrics(
    embeddings: Option<&Path>,
    labels: Option<&Path>,
    scores: Option<&Path>,
    probe_seed: Option<u64>,
    out: &Path,
) -> CliResult<PathBuf> {
    if embeddings.is_none() && scores.is_none() {
        return Err(CliError::Config("give --embeddings and/or --scores".into()));
    }
    let inputs = MetricsInputs {
        embeddings,
        labels,
        scores,
        probe_seed,
    };
    let provenance = Provenance::new("metrics", probe_seed.unwrap_or(0), &inputs);
    create_dir(out)?;
    if let Some(path) = embeddings {
        let x = to_matrix(read_json(path)?)?;
        let labels: Option<Vec<usize>> = labels.map(read_json).transpose()?;
        let report = run_metrics(&x, labels.as_deref(), probe_seed)?;
        println!("MAD {:.4}", report.mad);
        if let Some(t) = report.mad_tgt {
            println!("MAD_tgt {t:.4}");
        }
        if let Some(a) = report.pair_probe_auc {
            println!("pair probe AUC {a:.4}");
        }
        write(
            &out.join("report.json"),
            pretty(&Stamped {
                body: &report,
                provenance: provenance.clone(),
            }),
        )?;
    }
    if let Some(path) = scores {
        let methods: Vec<MethodScores> = read_json(path)?;
        let table = integrative_rank(&methods)?;
        print!("{}", table.to_text());
        write(&out.join("rank.csv"), table.to_csv()?)?;
        write(&out.join("rank.json"), pretty(&Stamped { body: &table, provenance }))?;
    }
    Ok(out.to_path_buf())
}

/// Generate a block-model graph file.
pub fn cmd_gen(config: &Path, seed: Option<u64>, out: &Path) -> CliResult<PathBuf> {
    let mut sbm: SbmConfig = read_document(config)?;
    if let Some(s) = seed {
        sbm.seed = s;
    }
    sbm.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let graph = grato::generate_sbm(&sbm)?;
    let mut file = graph.to_file();
    file.provenance = Some(serde_json::to_value(Provenance::new("gen", sbm.seed, &sbm)).expect("serializes"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(out, serde_json::to_string(&file).expect("graph serializes"))?;
    println!(
        "{} nodes, {} edges, {} classes -> {}",
        graph.num_nodes(),
        graph.adj().nnz() / 2,
        graph.num_classes(),
        out.display()
    );
    Ok(out.to_path_buf())
}
