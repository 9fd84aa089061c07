//! `eofm`: config-driven front end for the displacement estimation pipeline.
//!
//! Exit codes: 0 on success, 1 on a numerical or runtime failure, 2 on a
//! usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{ConfigError, LoadedConfig};

#[derive(Parser)]
#[command(name = "eofm", version, about = "Displacement field estimation for elastography image pairs")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set solver.alpha=0.8`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic compression pair with ground truth.
    Simulate,
    /// Detect bubbles in frame 0 and track them into frame 1.
    Track,
    /// Solve for the homogeneous background displacement.
    Background,
    /// Plain or speckle-augmented optical flow, without background.
    Flow,
    /// Full estimate: tracking, background and multiscale solve.
    Eofm,
    /// Compare an estimated field with the ground truth.
    Eval,
    /// Run the five-configuration comparison on a phantom.
    Ablation,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error at {0}")]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("cannot write output {0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] eofm::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Output(_) | CliError::Core(_) => 1,
        }
    }
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let config = LoadedConfig::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Track => commands::track_cmd(&config),
        Command::Background => commands::background(&config),
        Command::Flow => commands::flow(&config),
        Command::Eofm => commands::eofm(&config),
        Command::Eval => commands::eval(&config),
        Command::Ablation => commands::ablation(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(manifest) => {
            println!("manifest: {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("eofm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
