//! `pegqnn`: train, evaluate and benchmark spatial quantile models.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pegqnn", version, about = "Spatial quantile regression with graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoint.json, history.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// CSV file replacing `dataset.path`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Replaces the model and training seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint; writes report.json and ecp.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated grid replacing `eval.taus`.
        #[arg(long)]
        taus: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Predict quantiles; writes predictions.csv with one column per level.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated levels in (0, 1).
        #[arg(long)]
        taus: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train and evaluate every `*.json` config of a directory in turn;
    /// writes benchmark.csv.
    Benchmark {
        /// Directory of run configs.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<pegqnn_core::Error> for CliError {
    fn from(e: pegqnn_core::Error) -> Self {
        CliError::runtime(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            data,
            out_dir,
            seed,
        } => commands::train(&config, data.as_deref(), &out_dir, seed),
        Command::Eval {
            checkpoint,
            config,
            data,
            taus,
            out_dir,
        } => commands::eval(&checkpoint, &config, data.as_deref(), taus.as_deref(), &out_dir),
        Command::Predict {
            checkpoint,
            config,
            data,
            taus,
            out_dir,
        } => commands::predict(&checkpoint, &config, data.as_deref(), &taus, &out_dir),
        Command::Benchmark { config, out_dir, seed } => commands::benchmark(&config, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
