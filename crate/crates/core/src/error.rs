use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("reference signal is all zero; {0} is undefined")]
    ZeroReference(&'static str),

    #[error("bad image magic")]
    BadMagic,

    #[error("unsupported image format version {0}")]
    UnsupportedVersion(u32),

    #[error("payload size error: {0}")]
    PayloadSize(String),

    #[error("dimension disagreement: header declares {declared} pixels, payload holds {actual}")]
    DimensionMismatch { declared: usize, actual: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("step size {gamma} is infeasible: must be below min(1/M, 1/L) = {limit}")]
    InfeasibleStep { gamma: f64, limit: f64 },

    #[error("prior kind `{0}` has no analytic regularizer")]
    UnsupportedPrior(&'static str),

    #[error("invalid schedule spec `{0}`")]
    Schedule(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}
