use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("zero gradient: {0}")]
    ZeroGradient(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("insufficient clients: need at least {needed}, have {available}")]
    InsufficientClients { needed: usize, available: usize },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("cohort error: {0}")]
    Cohort(&'static str),

    #[error("reference point error: point ({x}, {y}) exceeds reference ({rx}, {ry})")]
    ReferencePoint { x: f64, y: f64, rx: f64, ry: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("integrity error in {file}: {message}")]
    Integrity { file: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }

    pub(crate) fn integrity(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Integrity {
            file: file.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parameter(_) | Error::Parse { .. } => 2,
            Error::Integrity { .. } => 3,
            _ => 4,
        }
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
