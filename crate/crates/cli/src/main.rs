use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod evaluate;
mod manifest;
mod plot;
mod scenes;

#[derive(Parser, Debug)]
#[command(name = "sogm", version, about = "Semantic grid maps, supercells and Bakis-HMM path decoding")]
struct Cli {
    /// Worker threads for scenario-parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes with their grids, labels and trajectories.
    Simulate(SimulateArgs),
    /// Extract supercells from every scene of a dataset.
    Segment(SegmentArgs),
    /// Fit a classifier on the training split.
    Train(TrainArgs),
    /// Predict per-frame classes on the test split with a trained model.
    Decode(DecodeArgs),
    /// Score predictions, or run a full experiment with optional sweeps.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON). Missing sections take defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Overrides the seeds of the configuration. With an existing dataset
    /// only the model, classifier and split seeds are replaced.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[command(flatten)]
    common: Common,

    /// Directory written by `simulate`.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long)]
    dataset: PathBuf,

    /// Directory written by `segment`; recomputed when omitted.
    #[arg(long)]
    segmentation: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long)]
    dataset: PathBuf,

    #[arg(long)]
    segmentation: Option<PathBuf>,

    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,

    /// Per-frame prediction CSV written by `decode`. When given, only scores it.
    #[arg(long, conflicts_with_all = ["dataset", "sweep"])]
    predictions: Option<PathBuf>,

    /// Scenes to evaluate on; simulated from the configuration when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,

    #[arg(long, requires = "dataset")]
    segmentation: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Sweep::None)]
    sweep: Sweep,

    /// Number of train/test splits, with split seeds counting up from the configured one.
    #[arg(long, default_value_t = 1)]
    splits: u64,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Also write a box plot of per-scenario macro-F1 per sweep value.
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Sweep {
    None,
    Representation,
    BakisLength,
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a.common),
        Command::Segment(a) => commands::segment(&a.common, &a.dataset),
        Command::Train(a) => commands::train(&a.common, &a.dataset, a.segmentation.as_deref()),
        Command::Decode(a) => commands::decode(&a.common, &a.dataset, a.segmentation.as_deref(), &a.model),
        Command::Evaluate(a) => evaluate::run(&a),
    }
}

/// 2 invalid configuration, 3 missing artifact, 4 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use sogm_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidParams(_) | E::UnknownLayer(_) | E::UnknownClass(_) | E::Json { .. } => 2,
                E::NotFound(_) => 3,
                E::Numerical(_) | E::EmptySequence | E::DimensionError { .. } | E::IndexOutOfBounds { .. } => 4,
                E::Io { .. } => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOGM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
