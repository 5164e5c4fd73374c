//! Operator entry point: benchmark sweeps, entropy analyses, and oracle
//! simulations, all driven from a declarative config file.
//!
//! Exit codes are a stable contract: 0 for success (including degraded
//! runs, which warn), 1 for a verification failure in `simulate`, 2 for
//! usage, config, or environment errors.

mod backends;
mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::Overrides;

const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "vantage",
    version,
    about = "Test-time scaling engine for multi-view spatial reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Base seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for beam expansion (overrides parallelism).
    #[arg(long)]
    parallel: Option<usize>,
    /// Replay a recorded transcript instead of calling live backends.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Report format: csv, json, or svg (overrides the config's format).
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark sweep and emit traces, results, and reports.
    Run(CommonArgs),
    /// Teacher-forced answer-entropy analysis per sweep condition.
    Entropy(CommonArgs),
    /// Verify beam-search buffers against exhaustive enumeration on the
    /// bundled oracle scenes.
    Simulate(CommonArgs),
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            parallel: self.parallel,
            format: self.format.clone(),
            replay: self.replay.clone(),
        }
    }
}

fn dispatch(cli: Cli) -> i32 {
    let (args, run): (&CommonArgs, fn(config::Settings) -> anyhow::Result<i32>) =
        match &cli.command {
            Command::Run(args) => (args, commands::cmd_run),
            Command::Entropy(args) => (args, commands::cmd_entropy),
            Command::Simulate(args) => (args, commands::cmd_simulate),
        };
    let settings = match config::load(&args.config, &args.overrides()) {
        Ok(settings) => settings,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run(settings) {
        Ok(code) => code,
        Err(e) => {
            // anything that prevents a run from completing is an
            // environment/config problem, not a verification failure
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(dispatch(Cli::parse()));
}
