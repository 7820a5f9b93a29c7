//! `finepo` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "finepo",
    version,
    about = "Step-level credit assignment toolkit for multi-step marking policies"
)]
#[command(after_help = config::key_help())]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file (flat keys, see the key list below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set alpha=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Master seed; beats FINEPO_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a trajectory JSONL file into per-response advantages.
    Redistribute(commands::RedistributeArgs),
    /// Score an action template over an N x N grid of a scene.
    Heatmap(commands::HeatmapArgs),
    /// Generate a labeled perturbation dataset.
    Forge(commands::ForgeArgs),
    /// Train the tabular simulator and write metrics.
    Simulate(commands::SimulateArgs),
    /// Validate a trajectory JSONL file record by record.
    Inspect(commands::InspectArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    let mut cfg = config::RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    cfg.seed = resolve_seed(cli.global.seed, std::env::var("FINEPO_SEED").ok(), cfg.seed)?;
    match cli.command {
        Command::Redistribute(args) => commands::redistribute(&cfg, &args),
        Command::Heatmap(args) => commands::heatmap(&cfg, &args),
        Command::Forge(args) => commands::forge(&cfg, &args),
        Command::Simulate(args) => commands::simulate(&cfg, &args),
        Command::Inspect(args) => commands::inspect(&cfg, &args),
    }
}

/// `--seed` wins; the environment is consulted only without it.
fn resolve_seed(flag: Option<u64>, env: Option<String>, config: u64) -> Result<u64, CliError> {
    match (flag, env) {
        (Some(s), _) => Ok(s),
        (None, Some(v)) => v.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "FINEPO_SEED must be an unsigned integer, got `{v}`"
            ))
        }),
        (None, None) => Ok(config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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
