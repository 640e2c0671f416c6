use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("voltage file size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("non-finite sample at time {time}, channel {channel}")]
    NonFinite { time: usize, channel: usize },

    #[error("event out of range: event {index} spans [{t_on}, {t_off}) but recording has {n_samples} samples")]
    EventOutOfRange { index: usize, t_on: usize, t_off: usize, n_samples: usize },

    #[error("events unsorted or overlapping at event {index}")]
    EventOrder { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no epochs retained (window {window}, {dropped} dropped)")]
    NoEpochs { window: usize, dropped: usize },

    #[error("invalid filter: {0}")]
    Filter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
