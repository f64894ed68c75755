//! Command-line driver: config loading, optimizer naming and the subcommands.

pub mod commands;
pub mod config;
pub mod optimizers;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{CliError, Layout, StageChoice};
pub use config::{load_config, parse_config, Config, ConfigError};
pub use optimizers::OptimizerSpec;

#[derive(Debug, Parser)]
#[command(name = "celo", version, about = "Meta-train, evaluate and score the Celo learned optimizer")]
pub struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides CELO_SEED and the file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory (overrides `io.output_dir`).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StageArg {
    Rule,
    Scheduler,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-stage PES meta-training: update rule, then scheduler.
    MetaTrain {
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Continue from the stage checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Adam learning-rate sweep on every evaluation task.
    SweepAdam,
    /// Train every configured optimizer on every evaluation task and seed.
    Evaluate {
        /// Celo checkpoint (overrides `io.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Normalized scores and aggregate metrics against the sweep baselines.
    Score,
    /// SVG loss, step-size and meta-loss plots from stored records and logs.
    Plot,
}

/// Config after applying flags and the environment.
pub fn resolve_config(cli: &Cli, env_seed: Option<String>) -> Result<Config, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => Config::default(),
    };
    if let Some(s) = env_seed {
        config.seed = s.trim().parse().map_err(|_| ConfigError::Invalid(format!("CELO_SEED={s:?} is not an unsigned integer")))?;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(d) = &cli.output_dir {
        config.io.output_dir = d.clone();
    }
    if let Command::Evaluate { checkpoint: Some(c) } = &cli.command {
        config.io.checkpoint = Some(c.clone());
    }
    Ok(config)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli, std::env::var("CELO_SEED").ok())?;
    match &cli.command {
        Command::MetaTrain { stage, resume } => {
            let stage = match stage {
                StageArg::Rule => StageChoice::Rule,
                StageArg::Scheduler => StageChoice::Scheduler,
                StageArg::Both => StageChoice::Both,
            };
            commands::meta_train(&config, stage, *resume)
        }
        Command::SweepAdam => commands::sweep_adam(&config),
        Command::Evaluate { .. } => commands::evaluate(&config),
        Command::Score => commands::score(&config),
        Command::Plot => commands::plot(&config),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
