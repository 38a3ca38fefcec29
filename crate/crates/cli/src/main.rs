//! `deeprls`: generate mixtures, run the RLS baseline, train and evaluate
//! Deep-RLS, and reproduce the sweep experiments as CSV.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or validation error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deeprls_core::deep::Residual;
use deeprls_core::{ExperimentKind, Metric, Nonlinearity};

#[derive(Debug, Parser)]
#[command(
    name = "deeprls",
    version,
    about = "RLS nonlinear PCA and Deep-RLS for blind source separation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset file of mixed uniform sources.
    Gen(GenArgs),
    /// Run the classical RLS recursion over the test sequences.
    Rls(RlsArgs),
    /// Train a Deep-RLS model on the training sequences.
    Train(TrainArgs),
    /// Evaluate a trained model on the test sequences.
    Eval(EvalArgs),
    /// Sweep layers (fig1) or sources (fig2), comparing Deep-RLS with RLS.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long = "sources", visible_alias = "m", default_value_t = 2)]
    sources: usize,
    /// Defaults to sources + 2.
    #[arg(long = "sensors", visible_alias = "l")]
    sensors: Option<usize>,
    /// Sequence length T.
    #[arg(long = "layers", visible_alias = "T", value_name = "T", default_value_t = 100)]
    len: usize,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Zero-mean sources, U(-0.5, 0.5).
    #[arg(long)]
    center: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file (UBSSDAT1).
    #[arg(long)]
    data: PathBuf,
    /// Number of trailing sequences forming the test set.
    #[arg(long, default_value_t = 100)]
    test: usize,
}

#[derive(Debug, Args)]
struct RlsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.99)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value = "tanh")]
    nonlinearity: Nonlinearity,
    /// Seed of the initial separating matrix.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "aligned")]
    metric: Metric,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 40)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Reconstruction residual of the loss: `updated` (post-update W) or `prior`.
    #[arg(long, default_value = "updated")]
    residual: Residual,
    #[arg(long, default_value = "tanh")]
    nonlinearity: Nonlinearity,
    /// Share one parameter set across all layers.
    #[arg(long)]
    tied_weights: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Expected depth; must equal the dataset's sequence length when given.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path (UBSSMDL1).
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "aligned")]
    metric: Metric,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// `fig1` (sweep layers T) or `fig2` (sweep sources m).
    #[arg(long, default_value = "fig1")]
    kind: ExperimentKind,
    /// Comma-separated sweep values; defaults to 10,20,50,100 (fig1) or 2,3,4,5 (fig2).
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[arg(long = "sources", visible_alias = "m", default_value_t = 2)]
    sources: usize,
    #[arg(long = "sensors", visible_alias = "l")]
    sensors: Option<usize>,
    /// Depth used by the fig2 sweep.
    #[arg(long = "layers", visible_alias = "T", default_value_t = 20)]
    layers: usize,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    opts: TrainOpts,
    /// Forgetting factor of the RLS baseline.
    #[arg(long, default_value_t = 0.99)]
    beta: f64,
    /// Nonlinearity of the RLS baseline; defaults to --nonlinearity.
    #[arg(long)]
    rls_nonlinearity: Option<Nonlinearity>,
    #[arg(long, default_value = "aligned")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a wall_seconds column (makes output run-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Rls(a) => commands::rls(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
