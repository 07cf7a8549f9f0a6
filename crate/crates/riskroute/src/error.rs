//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the routing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-binary label: {0}")]
    NonBinaryLabel(String),

    #[error("unknown split tag: {0}")]
    UnknownSplitTag(String),

    #[error("hash mismatch for {artifact}: expected {expected}, got {got}")]
    HashMismatch {
        artifact: String,
        expected: String,
        got: String,
    },

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("operating point (lambda={lambda}, alpha={alpha}) not in threshold table")]
    OperatingPointNotInTable { lambda: f64, alpha: f64 },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
