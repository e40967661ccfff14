//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two grids that must share a shape do not.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// A batch was too small for the requested selection fraction.
    #[error("empty selection: floor({keep_fraction} * {batch}) = 0; batch too small")]
    EmptySelection { keep_fraction: f64, batch: usize },

    /// Per-image normalization cannot be performed.
    #[error("cannot normalize sample {id}: intensity variance is zero")]
    ZeroVariance { id: String },

    /// A dataset sample is missing its paired file.
    #[error("sample {id}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },

    /// A dataset file exists but could not be decoded.
    #[error("sample {id}: unreadable file {path}: {reason}")]
    UnreadableFile {
        id: String,
        path: PathBuf,
        reason: String,
    },

    /// Evaluation was requested on an empty sample set.
    #[error("empty sample set: {0}")]
    EmptyDataset(String),

    /// Checkpoint or report data on disk is inconsistent.
    #[error("bad artifact {path}: {reason}")]
    BadArtifact { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape_mismatch(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::ShapeMismatch { .. } | Error::EmptySelection { .. }
        )
    }
}
