//! `elfs`: command-line driver for label-free coreset selection.

mod commands;
mod config;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elfs_core::data::Metric;
use elfs_core::harness::Method;

use config::List;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or parameter combinations (exit code 2).
    Usage(String),
    /// Anything that fails after the inputs were accepted (exit code 1).
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<elfs_core::Error> for CliError {
    fn from(e: elfs_core::Error) -> Self {
        use elfs_core::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::Infeasible { .. }
            | E::KOutOfRange { .. }
            | E::NoFeasibleBeta => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(
    name = "elfs",
    version,
    about = "Label-free coreset selection from embeddings"
)]
pub struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Convert a CSV file or synthetic blobs into embedding files.
    Ingest(IngestArgs),
    /// Build the cosine k-NN table.
    Knn(KnnArgs),
    /// Train the clustering ensemble and write pseudo-labels.
    Cluster(ClusterCmdArgs),
    /// Score predicted labels against ground truth (evaluation only).
    Metrics(MetricsArgs),
    /// Train the probe on pseudo-labels and write training-dynamics scores.
    Dynamics(DynamicsArgs),
    /// Select a coreset plan from pseudo-labels and scores.
    Select(SelectArgs),
    /// Train on a coreset with ground truth and report test accuracy (evaluation only).
    Eval(EvalArgs),
    /// Run the synthetic method comparison (evaluation only).
    Compare(CompareArgs),
    /// Histogram of hardness scores, all vs selected.
    Histogram(HistogramArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Knn(_) => "knn",
            Command::Cluster(_) => "cluster",
            Command::Metrics(_) => "metrics",
            Command::Dynamics(_) => "dynamics",
            Command::Select(_) => "select",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Histogram(_) => "histogram",
        }
    }
}

#[derive(Args)]
pub struct IngestArgs {
    /// CSV with a header row; numeric columns become features.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// CSV column holding integer ground-truth labels, if present.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Generate Gaussian blobs instead of reading a CSV.
    #[arg(long)]
    pub blobs: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Held-out fraction; 0 writes a single unsplit set.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// L2-normalize rows before writing.
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args)]
pub struct KnnArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub heads: Option<usize>,
    /// Number of clusters (default: the embedding manifest's class count).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub pmi_exponent: Option<f64>,
    #[arg(long)]
    pub ema_momentum: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub probe_hidden: Option<usize>,
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_batch_size: Option<usize>,
    #[arg(long)]
    pub probe_lr: Option<f64>,
    #[arg(long)]
    pub probe_min_lr: Option<f64>,
    #[arg(long)]
    pub probe_momentum: Option<f64>,
    #[arg(long)]
    pub probe_weight_decay: Option<f64>,
}

#[derive(Args)]
pub struct ClusterCmdArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Neighbor CSV from `elfs knn`; built in-line when absent.
    #[arg(long)]
    pub knn: Option<PathBuf>,
    /// Neighbor count when the table is built in-line.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterArgs,
}

#[derive(Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct DynamicsArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub pseudo_labels: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Train on these rows only (one index per line).
    #[arg(long)]
    pub indices: Option<PathBuf>,
    /// Epochs averaged by EL2N.
    #[arg(long)]
    pub early_epochs: Option<usize>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Args)]
pub struct SelectArgs {
    /// Score file from `elfs dynamics`; computed in-line when absent.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub pseudo_labels: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Total prune rate α.
    #[arg(long)]
    pub prune_rate: Option<f64>,
    /// Hard prune rate β.
    #[arg(long)]
    pub hard_prune_rate: Option<f64>,
    /// Choose β on a pseudo-labeled validation split.
    #[arg(long)]
    pub search_beta: bool,
    #[arg(long)]
    pub beta_step: Option<f64>,
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Strata for the CCS baseline.
    #[arg(long)]
    pub strata: Option<usize>,
    #[arg(long)]
    pub early_epochs: Option<usize>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Held-out rows of `--embeddings` (one index per line).
    #[arg(long)]
    pub test_indices: Option<PathBuf>,
    /// Separate held-out embedding file.
    #[arg(long)]
    pub test_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub test_truth: Option<PathBuf>,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Labels used to train coreset probes.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Labels used for test accuracy and pseudo-label quality (default: --truth).
    #[arg(long)]
    pub eval_truth: Option<PathBuf>,
    #[arg(long)]
    pub methods: Option<List<Method>>,
    #[arg(long)]
    pub prune_rates: Option<List<f64>>,
    /// Seeds to average over (default: --seed).
    #[arg(long)]
    pub seeds: Option<List<u64>>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub early_epochs: Option<usize>,
    #[arg(long)]
    pub beta_step: Option<f64>,
    #[arg(long)]
    pub strata: Option<usize>,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let name = cli.command.name();
    match commands::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elfs {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
