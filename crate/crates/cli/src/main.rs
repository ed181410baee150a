mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use avsal_core::data::Domain;
use avsal_core::model::FusionMode;
use avsal_core::train::DaMode;
use clap::{Args, Parser, Subcommand};

use crate::commands::PitchRange;

/// Audio-visual saliency experiments: synthetic data, training with
/// domain-adversarial ablations, evaluation and gradient checks.
#[derive(Parser)]
#[command(name = "avsal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a metric report.
    Eval(EvalArgs),
    /// Merge metric reports into one table.
    Report(ReportArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Common {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    /// source|target; selects the default domain statistics.
    #[arg(long)]
    domain: Option<Domain>,
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    coupling: Option<f64>,
    /// Tone range in cycles per clip, as LO:HI.
    #[arg(long)]
    pitch: Option<PitchRange>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    texture: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    audio_len: Option<usize>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    fixations: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// none|audio|audio+fusion
    #[arg(long)]
    da: Option<DaMode>,
    /// cm|concat|bilinear
    #[arg(long)]
    fusion: Option<FusionMode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to 1e-4 without adaptation and 1e-5 with it.
    #[arg(long)]
    lr: Option<f64>,
    /// Defaults to 8 without adaptation and 6 with it.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Ramp the reversal coefficient from 0 over the first half of training.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    lambda_ramp: Option<bool>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Defaults to <out>.loss.csv.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    fusion_dim: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    w_s: Option<f64>,
    #[arg(long)]
    w_a: Option<f64>,
    #[arg(long)]
    w_av: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `self` (other clips of --data) or a dataset directory.
    #[arg(long)]
    sauc_pool: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Row label of the printed summary.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Metric report CSVs, one table row each.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated row labels; by default derived from file names.
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// `all` or one op name.
    #[arg(long)]
    ops: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Exit 1 for usage errors, 2 for runtime failures.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<avsal_core::Error> for Failure {
    fn from(e: avsal_core::Error) -> Self {
        match e {
            avsal_core::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
