use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state diverged at step {step} (sup-norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("fitting failed at iteration {iteration}: {source}")]
    Fitting {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pricing failed for parameters {params}: {reason}")]
    Pricing { params: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-parsable class name, used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Input(_) | Error::DimensionMismatch { .. } => "input",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Fitting { .. } => "fitting",
            Error::Pricing { .. } => "pricing",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
