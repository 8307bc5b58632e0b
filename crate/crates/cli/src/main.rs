//! `dba`: benchmarks, validators, gradient checks, training and projection
//! dumps. Exit codes: 0 success, 1 check or run failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dba_core::DbaError;

/// Bad flags, config values or preconditions (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<DbaError> for CliError {
    fn from(e: DbaError) -> Self {
        match e {
            DbaError::Parameter(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "dba", version, about = "Dynamic bilinear low-rank attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed (falls back to DBA_SEED). `gradcheck` also accepts a range `1..10`.
    #[arg(long)]
    pub seed: Option<String>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Shape {
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub dp: Option<String>,
    #[arg(long)]
    pub din: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Time forward passes over a length sweep and fit log-log slopes.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: Shape,
        /// Comma-separated mechanisms.
        #[arg(long, alias = "mechanism")]
        mechanisms: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        /// Also write a log-log SVG plot here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Random-projection, representability and reduction checks.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: Shape,
        /// Comma-separated distortion levels.
        #[arg(long)]
        epsilon: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Backward pass against finite differences for self- and cross-attention.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: Shape,
        /// Length of the second hierarchy for the cross-attention check.
        #[arg(long)]
        n2: Option<usize>,
    },
    /// Train a small classifier on a synthetic task.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy of a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `val` or `train`.
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Write W_r, W_c, W_r′, W_c′ of the first layer for one or two inputs.
    DumpProjections {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// n × d tensor text file; give twice to compare two inputs.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Length of generated inputs when no --input is given.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bench {
            common,
            shape,
            mechanisms,
            reps,
            svg,
        } => commands::bench(&common, &shape, mechanisms, reps, svg),
        Command::Validate {
            common,
            shape,
            epsilon,
            trials,
        } => commands::validate(&common, &shape, epsilon, trials),
        Command::Gradcheck { common, shape, n2 } => commands::gradcheck(&common, &shape, n2),
        Command::Train {
            common,
            shape,
            task,
            mechanism,
            epochs,
        } => commands::train(&common, &shape, task, mechanism, epochs),
        Command::Eval {
            common,
            shape,
            checkpoint,
            split,
        } => commands::eval(&common, &shape, &checkpoint, &split),
        Command::DumpProjections {
            common,
            checkpoint,
            input,
            n,
        } => commands::dump_projections(&common, &checkpoint, &input, n),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
