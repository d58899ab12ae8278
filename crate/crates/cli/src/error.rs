use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("identification gap {gap:e} exceeds tolerance {tolerance:e}")]
    OracleGap { gap: f64, tolerance: f64 },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::OracleGap { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Output { .. } => 3,
            CliError::Estimation(_) => 4,
        }
    }
}
