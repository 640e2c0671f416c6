use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error at layer {layer} ({name}): {msg}")]
    Shape { layer: usize, name: String, msg: String },

    #[error("invalid: {0}")]
    Invalid(String),

    #[error("non-finite activation at layer {layer} ({name})")]
    NonFinite { layer: usize, name: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model file checksum mismatch (truncated or corrupted)")]
    Checksum,

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] ecog_core::Error),
}

impl NnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NnError::Invalid(msg.into())
    }
}
