//! `frontdoor`: estimate the interventional mean on a CSV file, run
//! replication studies, or check identification on a structural model.
//!
//! Exit codes: 0 success, 1 identification gap above tolerance, 2
//! configuration error, 3 data or output error, 4 estimation failure.

mod error;
mod estimate;
mod oracle;
mod report;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "frontdoor", version, about = "Frontdoor interventional-mean estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate on a CSV file, with optional bootstrap intervals and contrasts.
    Estimate(Box<estimate::EstimateArgs>),
    /// Run a replication study and tabulate bias, SE and coverage.
    Simulate(simulate::SimulateArgs),
    /// Compare the frontdoor functional with the interventional mean of a model.
    Oracle(oracle::OracleArgs),
}

/// Flags shared by every subcommand. Outputs do not depend on `--workers`.
#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for report.json and CSV tables; the report goes to stdout
    /// when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses a TOML file, returning it with the directory relative paths
/// resolve against.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, PathBuf), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// Parses a kebab-case enum name the way configuration files spell it.
fn parse_kebab<T: DeserializeOwned>(what: &str, text: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(text.to_string())).map_err(|_| CliError::Config(format!("unknown {what} `{text}`")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(args) => estimate::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Oracle(args) => oracle::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
