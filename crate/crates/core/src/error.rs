//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid logits: {0}")]
    InvalidLogits(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate ROC: {0}")]
    DegenerateRoc(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid budget {0}: must lie strictly between 0 and 1")]
    InvalidBudget(f64),

    #[error("invalid IoU thresholds: {0}")]
    InvalidTaus(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema version mismatch in {what}: found {found}, supported {supported}")]
    SchemaVersion {
        what: &'static str,
        found: String,
        supported: String,
    },

    #[error("IoU threshold {0} not present in profile")]
    UnknownTau(f64),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 validation/config, 2 I/O, 3 degenerate data.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io { .. } => 2,
            Error::DegenerateRoc(_) | Error::DegenerateData(_) | Error::EmptyInput(_) => 3,
            _ => 1,
        }
    }
}
