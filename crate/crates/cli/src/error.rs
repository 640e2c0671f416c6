use std::path::PathBuf;

use ecog_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, bad flags. Exit 2.
    #[error("config error: {0}")]
    Config(String),
    /// Missing or malformed inputs, incompatible models. Exit 3.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values or training divergence. Exit 4.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.into().display()))
    }
}

impl From<ecog_core::Error> for CliError {
    fn from(e: ecog_core::Error) -> Self {
        match e {
            ecog_core::Error::Numeric(_) | ecog_core::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Divergence { .. } | NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            NnError::Core(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}
