use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use grato::search::Order;
use grato_cli::commands;
use grato_cli::{CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "grato", version, about = "Architecture search over graph neural network operations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a block architecture, retrain it and compare against a GCN.
    Search {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Retrain a saved architecture.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a saved model on a graph.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Smoothness, pair-probe and rank metrics for external results.
    Metrics {
        /// JSON array of embedding rows.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// JSON array of class indices, one per row.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// JSON array of `{name, accuracy, macro_f1, mad}` to rank.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Run the pair probe with this seed.
        #[arg(long)]
        probe: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a block-model graph file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run once per seed; outputs go to `<out>/seed-<s>`.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_order)]
    order: Option<Order>,
    #[arg(long)]
    lambda_ovm: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_order(s: &str) -> Result<Order, String> {
    match s {
        "first" => Ok(Order::First),
        "second" => Ok(Order::Second),
        "paper-literal" | "paper_literal" => Ok(Order::PaperLiteral),
        _ => Err(format!("unknown order `{s}`, expected first, second or paper-literal")),
    }
}

impl RunArgs {
    fn configs(&self) -> CliResult<Vec<RunConfig>> {
        if self.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let base = RunConfig::load(&self.config)?;
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            order: self.order,
            lambda_ovm: self.lambda_ovm,
            blocks: self.blocks,
        };
        let mut one = base.clone();
        one.apply(&overrides);
        if self.seeds.is_empty() {
            return Ok(vec![one.resolve()?]);
        }
        let root = one.out_dir();
        self.seeds
            .iter()
            .map(|&s| {
                let mut cfg = one.clone();
                cfg.seed = s;
                cfg.out = Some(root.join(format!("seed-{s}")));
                cfg.resolve()
            })
            .collect()
    }
}

fn run_all(configs: Vec<RunConfig>, jobs: usize, task: impl Fn(&RunConfig) -> CliResult<PathBuf> + Sync) -> CliResult<()> {
    if configs.len() == 1 {
        task(&configs[0])?;
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                match task(cfg) {
                    Ok(dir) => log::info!("seed {} done: {}", cfg.seed, dir.display()),
                    Err(e) => {
                        log::error!("seed {}: {e}", cfg.seed);
                        failures.lock().expect("lock").push((cfg.seed, e));
                    }
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("lock");
    failures.sort_by_key(|(seed, _)| *seed);
    match failures.into_iter().next() {
        None => Ok(()),
        Some((_, e)) => Err(e),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Search { run } => run_all(run.configs()?, run.jobs, commands::cmd_search),
        Command::Train { arch, run } => run_all(run.configs()?, run.jobs, |cfg| commands::cmd_train(&arch, cfg)),
        Command::Eval { model, graph, out } => commands::cmd_eval(&model, &graph, &out).map(drop),
        Command::Metrics {
            embeddings,
            labels,
            scores,
            probe,
            out,
        } => commands::cmd_metrics(embeddings.as_deref(), labels.as_deref(), scores.as_deref(), probe, &out).map(drop),
        Command::Gen { config, out, seed } => commands::cmd_gen(&config, seed, Path::new(&out)).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRATO_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
