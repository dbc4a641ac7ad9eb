//! `raindrop` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Overrides;
pub use manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
    /// A check ran and did not pass; the report is already printed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "raindrop",
    version,
    about = "Graph-guided classifier for irregularly sampled time series"
)]
pub struct Cli {
    /// Log per-epoch progress.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// Maximum worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with class-dependent sensor coupling.
    Synth(SynthArgs),
    /// Train one model and write checkpoint, history and manifest.
    Train(TrainArgs),
    /// Evaluate under a missing-sensor or group setting.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on the desk model.
    Gradcheck(GradcheckArgs),
    /// Export class-averaged dependency graphs.
    ExportGraph(ExportArgs),
    /// Train the full model and its ablations on one split.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory.
    #[arg(long, env = "RAINDROP_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSONL samples.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON header describing the corpus.
    #[arg(long)]
    pub header: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Training seed; wins over `seed` in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split seed; wins over `split_seed` in the configuration.
    #[arg(long = "split-seed", alias = "split")]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "M", default_value_t = 6)]
    pub m: usize,
    #[arg(long = "N", default_value_t = 400)]
    pub n: usize,
    /// Grid points per sample before dropping.
    #[arg(long, default_value_t = 30)]
    pub obs: usize,
    /// Fraction of events removed.
    #[arg(long, default_value_t = 0.6)]
    pub drop: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add a label-independent `age` attribute.
    #[arg(long)]
    pub with_age: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "from_manifest")]
    pub data: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_manifest")]
    pub header: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Rerun exactly what a manifest records; other configuration flags are
    /// rejected.
    #[arg(long, conflicts_with_all = ["data", "header", "config", "set", "seed", "split_seed"])]
    pub from_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate fixed parameters; without it a model is trained per run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// 1 plain, 2 fixed sensors left out, 3 random sensors left out, 4 groups.
    #[arg(long, default_value_t = 1)]
    pub setting: u8,
    /// Comma-separated missing ratios (settings 2 and 3).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Static attribute index defining the groups (setting 4).
    #[arg(long)]
    pub group_attr: Option<usize>,
    /// Training group is `attr < value`.
    #[arg(long, conflicts_with = "group_equals")]
    pub group_below: Option<f64>,
    /// Training group is `attr == value`.
    #[arg(long)]
    pub group_equals: Option<f64>,
    /// Train on the complement group instead.
    #[arg(long)]
    pub group_invert: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Regularizer weight of the checked loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Write the per-parameter report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// `0`, `1`, ... or `all`.
    #[arg(long, default_value = "all")]
    pub class: String,
    /// Edges kept in the differential ranking.
    #[arg(long, default_value_t = raindrop_core::graph_export::DEFAULT_TOP)]
    pub top: usize,
    /// Averaged weights below this are dropped.
    #[arg(long, default_value_t = raindrop_core::graph_export::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Resampling repeats of the distance report.
    #[arg(long, default_value_t = raindrop_core::graph_export::DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated ablation flags; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub flags: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[command(flatten)]
    pub out: OutDir,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a, cli.jobs),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::ExportGraph(a) => commands::export_graph(&a),
        Command::Ablation(a) => commands::ablation(&a, cli.jobs),
    }
}
