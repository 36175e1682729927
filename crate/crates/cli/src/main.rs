//! `hcct`: synthetic data, training, fine-tuning, evaluation and heatmaps.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

mod commands;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hcct", version, about = "3D hybrid compact convolutional transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of HVOL volumes and a manifest.
    Synth(SynthArgs),
    /// Base training on the train split, validating on val.
    Train(TrainArgs),
    /// Fine-tune a base checkpoint with a frozen encoder.
    Finetune(TrainArgs),
    /// Confusion matrix and metrics on one split.
    Eval(EvalArgs),
    /// Attention heatmap and slice images for one volume.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key-value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base values before the config file and flags.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    extent: Option<usize>,
    /// Train, val and test fractions, comma-separated.
    #[arg(long)]
    fractions: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Base checkpoint (required for finetune).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Record measured seconds per epoch in the report.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split to evaluate: train, val or test.
    #[arg(long)]
    split: Option<String>,
    /// Unweighted class averaging instead of support weighting.
    #[arg(long)]
    macro_average: bool,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    volume: Option<PathBuf>,
    /// Query rows used for token importance: mean or cls.
    #[arg(long)]
    attention_mode: Option<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(hcct::Error),
}

impl From<hcct::Error> for CliError {
    fn from(e: hcct::Error) -> Self {
        match e {
            hcct::Error::Parameter(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a, false),
        Command::Finetune(a) => commands::train(a, true),
        Command::Eval(a) => commands::eval(a),
        Command::Explain(a) => commands::explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
