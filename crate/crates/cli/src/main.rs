//! Batch entry point wiring the pipeline stages together: triplet
//! construction, error injection, alignment metrics, and the detection
//! comparison, driven by one TOML config and a global seed.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Command-line error with the exit code contract: 1 for domain failures,
/// 2 for usage/config problems.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 2,
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(
    name = "taberr",
    version,
    about = "Build table-task triplets, inject budgeted synthetic errors, and score them against real errors"
)]
struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Thread cap for data-parallel stages (0 uses the library default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit instruction-tuning triplet JSONL files per task.
    BuildTriplets {
        /// Train fraction for a train/test split, e.g. 0.9.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Inject budgeted errors into the clean table.
    Generate,
    /// Score generated annotations against real ones.
    Evaluate,
    /// Run detectors over the real and generated dirty tables.
    Detect,
    /// Merge stage artifacts into one combined report.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(path) => RunConfig::load(path),
        None => Err(CliError::usage("--config is required for this command")),
    }
}

fn require_seed(cli: &Cli, config: &RunConfig) -> Result<u64, CliError> {
    cli.seed
        .or(config.seed)
        .ok_or_else(|| CliError::usage("a seed is required: pass --seed or set `seed` in the config"))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create out dir: {e}")))?;
    match &cli.command {
        Command::BuildTriplets { split } => {
            let config = load_config(cli)?;
            let seed = require_seed(cli, &config)?;
            commands::build_triplets(&config, seed, &cli.out_dir, *split)
        }
        Command::Generate => {
            let config = load_config(cli)?;
            let seed = require_seed(cli, &config)?;
            commands::generate(&config, seed, &cli.out_dir)
        }
        Command::Evaluate => {
            let config = load_config(cli)?;
            commands::evaluate(&config, cli.jobs, &cli.out_dir)
        }
        Command::Detect => {
            let config = load_config(cli)?;
            commands::detect(&config, &cli.out_dir)
        }
        Command::Report => commands::report(&cli.out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
