//! `popctl --config run.toml [--output-dir DIR] [--seed N]`
//!
//! Exit status: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 experiment-level failure. Every run writes `manifest.json`;
//! failed runs also write `error.json`.

mod config;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "popctl", version, about = "Run one population-control experiment")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = run::execute(&cli.config, cli.output_dir.as_deref(), cli.seed);
    ExitCode::from(status)
}
