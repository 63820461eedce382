//! `ffn`: extract descriptors, train the fusion network, evaluate,
//! verify and benchmark.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ffn_core::Error;

use crate::config::{Preset, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Argument(_) | Error::Construction { .. } => 1,
                Error::Io { .. } | Error::Format { .. } | Error::Data(_) | Error::Validation(_) => 2,
                Error::Numerical(_) => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ffn", version, about = "Feature fusion network person re-identification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    topology: Option<Preset>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write ELF16 descriptors, plus fused and CNN features when a checkpoint exists.
    Extract,
    /// Train the fusion network on stored descriptors.
    Train,
    /// Run the repeated single-shot protocol and write CMC reports.
    Eval,
    /// Gradient check and branch-influence probe on fresh models.
    Verify,
    /// Time feature extraction per image.
    Benchmark,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(t) = cli.topology {
        cfg.topology = t;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Extract => commands::extract(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Benchmark => commands::benchmark(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
