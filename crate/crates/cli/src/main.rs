use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// RGB-D salient object detection: synthesize data, train, infer, evaluate
/// and run the ablation matrix.
#[derive(Debug, Parser)]
#[command(name = "cmms", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a `step,loss` log.
    Train(TrainArgs),
    /// Predict saliency maps with a trained checkpoint.
    Infer(InferArgs),
    /// Score predicted maps against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate the full model and every ablation variant.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of samples [default: 200]
    #[arg(long)]
    pub count: Option<usize>,
    /// Image side, a multiple of 16 [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of additive depth noise [default: 0.05]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Depth shift against RGB, in pixels [default: 0]
    #[arg(long)]
    pub misalign: Option<i32>,
    /// `key = value` file supplying any of the options above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Options shared by `train` and `ablate`.
#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Dataset root holding rgb/, depth/ and gt/
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Total optimizer steps [default: 500]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Seeds initialization, data order and the train/test split [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 0.0001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per accumulated batch [default: 4]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Backbone widths of levels 1..5 [default: 8,16,32,32,32]
    #[arg(long)]
    pub channels: Option<String>,
    /// Convolutions per backbone level [default: 2]
    #[arg(long)]
    pub convs: Option<usize>,
    /// Checkpoint interval in steps; 0 saves only at the end [default: 50]
    #[arg(long)]
    pub save_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    /// Variant token (full, wo_cmfm, cmfa, ...) or `cmfm=..,afs=..,pea=..` [default: full]
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Loss log path [default: <ckpt>.loss.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from an existing checkpoint at --ckpt
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Dataset root; predicts every sample instead of a single pair
    #[arg(long, conflicts_with_all = ["rgb", "depth"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write all five saliency and five edge maps
    #[arg(long)]
    pub side_outputs: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mean precision-recall curve CSV
    #[arg(long)]
    pub pr: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of variant tokens [default: all eleven]
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
