//! `xmodal`: generate synthetic paired data, train and evaluate cross-modal
//! retrieval models, sweep λ, compare scenarios and query a trained model.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime error.

mod commands;
mod config;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "xmodal", version, about = "Cross-modal retrieval with triplet losses")]
struct Cli {
    /// Print progress information to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write train/validation/test files.
    Gen(GenArgs),
    /// Train one scenario and write a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the repeated-subset retrieval protocol.
    Eval(EvalArgs),
    /// Train once per λ value and report validation MedR.
    SweepLambda(SweepArgs),
    /// Train several scenarios on the same data and compare test reports.
    Compare(CompareArgs),
    /// Rank the items of one modality against a query from the other.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for train.tsv, validation.tsv and test.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    pairs_per_class: Option<usize>,
    #[arg(long)]
    latent_dim_true: Option<usize>,
    #[arg(long)]
    dim_a: Option<usize>,
    #[arg(long)]
    dim_b: Option<usize>,
    #[arg(long)]
    within_class_noise: Option<f64>,
    #[arg(long)]
    cross_modal_noise: Option<f64>,
    #[arg(long)]
    unlabeled_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Flags that override the `training`, `encoder` and `data` sections of the
/// configuration file.
#[derive(Debug, Args, Default)]
struct TrainOverrides {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    validation_data: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha_pos: Option<f64>,
    #[arg(long)]
    alpha_neg: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, value_enum)]
    freeze_branch: Option<FreezeArg>,
    #[arg(long)]
    unfreeze_epoch: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Comma-separated hidden layer widths; empty for a single affine layer.
    #[arg(long)]
    hidden_dims: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FreezeArg {
    None,
    #[value(name = "a", alias = "A")]
    A,
    #[value(name = "b", alias = "B")]
    B,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log output path.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1000)]
    subset_size: usize,
    #[arg(long, default_value_t = 10)]
    n_subsets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as tab-separated rows.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Comma-separated λ values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Comma-separated scenario names.
    #[arg(long)]
    scenarios: String,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    n_subsets: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Directory for per-scenario checkpoints and epoch logs.
    #[arg(long)]
    save_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Modality {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["features", "id"]))]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Modality of the query; candidates come from the other one.
    #[arg(long, value_enum)]
    modality: Modality,
    /// Query features as comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    features: Option<String>,
    /// Use the features of this dataset sample as the query.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(xmodal_core::Error),
    Output(io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(xmodal_core::Error::Config(_)) => 1,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(_) | CliError::Output(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Output(e) => write!(f, "writing output: {e}"),
        }
    }
}

impl From<xmodal_core::Error> for CliError {
    fn from(e: xmodal_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .format_timestamp(None)
        .init();

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a, &mut out),
        Command::Train(a) => commands::train(a, &mut out),
        Command::Eval(a) => commands::eval(a, &mut out),
        Command::SweepLambda(a) => commands::sweep_lambda(a, &mut out),
        Command::Compare(a) => commands::compare(a, &mut out),
        Command::Query(a) => commands::query(a, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
