//! Run configuration: TOML or JSON files, command-line overrides, and the
//! provenance record embedded in every artifact.

use std::path::{Path, PathBuf};

use grato::objective::LossConfig;
use grato::search::{Order, SearchConfig};
use grato::supernet::BlockSpec;
use grato::{Graph, OpHyper, SbmConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the graph comes from: a file or a generated block model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSource {
    pub path: Option<PathBuf>,
    pub sbm: Option<SbmConfig>,
    /// Scale feature rows to sum to one after loading.
    pub row_normalize: bool,
}

/// The depth-matched plain GCN trained next to the searched model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub enabled: bool,
    /// Smoothness-loss weight used for the baseline.
    pub lambda_ovm: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            enabled: true,
            lambda_ovm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for every random stream (weights, masks, pairs, graph).
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub hidden_dim: usize,
    /// Blocks in the search supernet.
    pub blocks: usize,
    /// When set, the derived model is retrained with the fewest blocks
    /// whose effective depth reaches this many propagation layers.
    pub retrain_depth: Option<usize>,
    pub graph: GraphSource,
    pub block: BlockSpec,
    pub search: SearchConfig,
    pub loss: LossConfig,
    pub ops: OpHyper,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            hidden_dim: 256,
            blocks: 2,
            retrain_depth: None,
            graph: GraphSource::default(),
            block: BlockSpec::default(),
            search: SearchConfig::default(),
            loss: LossConfig::default(),
            ops: OpHyper::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

/// Values given on the command line, applied over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub order: Option<Order>,
    pub lambda_ovm: Option<f64>,
    pub blocks: Option<usize>,
}

/// Parse a TOML or JSON document, chosen by file extension.
pub fn read_document<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        _ => Err(CliError::Config(format!(
            "{}: unknown config format, expected .toml or .json",
            path.display()
        ))),
    }
}

impl RunConfig {
    /// Read a config file; a relative graph path is taken relative to it.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = read_document(path)?;
        if let Some(graph) = cfg.graph.path.as_mut() {
            if graph.is_relative() {
                if let Some(dir) = path.parent() {
                    *graph = dir.join(&*graph);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(order) = o.order {
            self.search.order = order;
        }
        if let Some(l) = o.lambda_ovm {
            self.loss.lambda_ovm = l;
        }
        if let Some(b) = o.blocks {
            self.blocks = b;
        }
    }

    /// Propagate the root seed and check every section.
    pub fn resolve(mut self) -> CliResult<Self> {
        self.search.seed = self.seed;
        if let Some(sbm) = self.graph.sbm.as_mut() {
            sbm.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: grato::Error| CliError::Config(format!("{name}: {e}"));
        if self.hidden_dim == 0 {
            return Err(CliError::Config("hidden_dim: must be positive".into()));
        }
        if self.blocks == 0 {
            return Err(CliError::Config("blocks: must be positive".into()));
        }
        if self.retrain_depth == Some(0) {
            return Err(CliError::Config("retrain_depth: must be positive".into()));
        }
        self.block.validate().map_err(|e| field("block", e))?;
        self.search.validate().map_err(|e| field("search", e))?;
        self.loss.validate().map_err(|e| field("loss", e))?;
        for op in self.ops.menu() {
            op.validate().map_err(|e| field("ops", e))?;
        }
        if !(self.baseline.lambda_ovm.is_finite() && self.baseline.lambda_ovm >= 0.0) {
            return Err(CliError::Config("baseline.lambda_ovm: must be >= 0".into()));
        }
        match (&self.graph.path, &self.graph.sbm) {
            (Some(_), Some(_)) => Err(CliError::Config("graph: give either path or sbm, not both".into())),
            (None, Some(sbm)) => sbm.validate().map_err(|e| field("graph.sbm", e)),
            _ => Ok(()),
        }
    }

    /// Load or generate the graph.
    pub fn graph(&self) -> CliResult<Graph> {
        let graph = match (&self.graph.path, &self.graph.sbm) {
            (Some(path), _) => grato::load_graph(path).map_err(|e| CliError::Config(e.to_string()))?,
            (None, Some(sbm)) => grato::generate_sbm(sbm)?,
            (None, None) => grato::generate_sbm(&SbmConfig {
                seed: self.seed,
                ..SbmConfig::default()
            })?,
        };
        Ok(if self.graph.row_normalize { graph.row_normalized() } else { graph })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn baseline_loss(&self) -> LossConfig {
        LossConfig {
            lambda_ovm: self.baseline.lambda_ovm,
            ..self.loss
        }
    }
}

/// Identifies the tool, version, seed and full configuration behind an
/// artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        Provenance {
            tool: "grato".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
        }
    }
}
