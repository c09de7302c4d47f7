//! Command-line tools and the HTTP demonstration service built on the
//! `parttransfer` engine.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod commands;
pub mod service;

pub use commands::{run, Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input {}: {message}", path.display())]
    BadInput { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Engine(#[from] parttransfer::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status: 2 for unreadable inputs, 3 for a library built
    /// by a different model, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput { .. } => 2,
            CliError::Engine(parttransfer::Error::FingerprintMismatch { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::MissingInput {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn parse_input<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
