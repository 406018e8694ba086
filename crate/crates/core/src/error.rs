use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Every variant has a stable class name (see [`Error::class`]) which the CLI
/// prints as the machine-parsable prefix of its single-line error report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies on the cut locus: {0}")]
    CutLocus(String),

    #[error("degenerate 6D embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("retraction failed: {0}")]
    Retraction(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: value out of range: {msg}")]
    Range { path: PathBuf, line: usize, msg: String },

    #[error("invalid sample size: {0}")]
    Size(String),

    #[error("degenerate sample configuration: {0}")]
    Degeneracy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable, machine-parsable class name of the error.
    pub fn class(&self) -> &'static str {
        match self {
            Error::CutLocus(_) => "CutLocusError",
            Error::DegenerateEmbedding(_) => "DegenerateEmbeddingError",
            Error::Retraction(_) => "RetractionError",
            Error::Parse { .. } => "ParseError",
            Error::Range { .. } => "RangeError",
            Error::Size(_) => "SizeError",
            Error::Degeneracy(_) => "DegeneracyError",
            Error::Config(_) => "ConfigError",
            Error::InvalidArgument(_) => "InvalidArgumentError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io { .. } => "IoError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
