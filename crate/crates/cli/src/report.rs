//! Provenance stamps and output files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Enough to re-run a command bit-identically: the resolved configuration is
/// embedded next to this stamp in every report.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// SHA-256 of the resolved configuration serialized as compact JSON.
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &'static str, config: &C, seed: u64, data: Option<&[u8]>) -> Self {
        let canonical = serde_json::to_vec(config).expect("configurations serialize");
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_sha256: sha256_hex(&canonical),
            data_sha256: data.map(sha256_hex),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Where reports go: a directory of files, or stdout for the JSON report.
pub struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(dir) = &dir {
            fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
        }
        Ok(Self { dir })
    }

    pub fn report<T: Serialize>(&self, name: &str, report: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
        text.push('\n');
        match &self.dir {
            Some(dir) => write(&dir.join(name), text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    /// Side tables are only written when an output directory is given.
    pub fn table(&self, name: &str, write_rows: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<(), CliError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        let mut bytes = Vec::new();
        write_rows(&mut bytes).map_err(|e| CliError::Output {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
        write(&path, &bytes)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
