//! `polyprobe`: build language packs, probe a masked LM, evaluate and report.
//!
//! Exit codes: 0 ok, 2 input error, 3 scorer error, 4 state mismatch, 5 internal.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polyprobe_core::PunctuationPolicy;

mod commands;
mod config;

use config::{RunConfig, ScorerSpec};

#[derive(Debug, Parser)]
#[command(name = "polyprobe", version, about = "Multilingual factual-consistency probing")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict to these languages (repeatable).
    #[arg(long = "lang", global = true)]
    pub lang: Vec<String>,
    /// reference:PATH or remote:URL
    #[arg(long, global = true)]
    pub scorer: Option<ScorerSpec>,
    #[arg(long, global = true)]
    pub punctuation: Option<PunctuationPolicy>,
    /// Worker threads for probing.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Continue from an existing prediction cache.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Raw builder inputs.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Language pack root.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the scorer's model tag in cache and report names.
    #[arg(long, global = true)]
    pub model_tag: Option<String>,
    /// Stop probing after this many newly scored cells.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    /// Candidates per sidecar request.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Sidecar retries on transient failures.
    #[arg(long, global = true)]
    pub retries: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build language packs from raw translation inputs.
    Build,
    /// Query the scorer over every pack cell.
    Probe,
    /// Compute metrics from prediction caches.
    Evaluate,
    /// Emit comparison tables and per-language charts from metric reports.
    Report {
        #[arg(long, default_value = "consistency")]
        metric: polyprobe_core::report::Metric,
    },
    /// Print dataset statistics for the packs.
    Stats,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        CliError {
            code,
            error: error.into(),
        }
    }
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SCORER: u8 = 3;
pub const EXIT_STATE: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = RunConfig::resolve(&args)
        .map_err(|e| CliError::new(EXIT_INPUT, e))
        .and_then(|cfg| match &args.command {
            Command::Build => commands::build(&cfg),
            Command::Probe => commands::probe(&cfg),
            Command::Evaluate => commands::evaluate(&cfg),
            Command::Report { metric } => commands::report(&cfg, *metric),
            Command::Stats => commands::stats(&cfg),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
