use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs (exit 2).
    Usage(String),
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<cotfuse_core::Error> for CliError {
    fn from(e: cotfuse_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "cotfuse", version, about = "Multi-perspective rationale distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// TOML config file; flags override its values [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: paths.out from the config, else the command name]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, filter and stratify a rationale dataset
    BuildCorpus(commands::BuildCorpusArgs),
    /// Train one student with the configured mode
    Train(commands::TrainArgs),
    /// Train several modes with a shared seed and compare them
    Ablate(commands::AblateArgs),
    /// Project, cluster and embed hidden states of trained students
    Analyze(commands::AnalyzeArgs),
    /// Exact-match accuracy of a student checkpoint
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildCorpus(a) => commands::build_corpus(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
