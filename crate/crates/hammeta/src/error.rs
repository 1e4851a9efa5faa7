use std::path::PathBuf;

use hammeta_core::evaluation::EvalError;
use hammeta_core::model::ModelError;
use hammeta_core::physics::{PhysicsError, System};
use hammeta_core::training::TrainingError;

/// Process exit code for invalid invocations, configuration or inputs.
pub const EXIT_USAGE: i32 = 1;
/// Process exit code for numerical failures (divergence, integration failure).
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("missing datasets under {}: required systems are {}", dir.display(), names(.required))]
    MissingData { dir: PathBuf, required: Vec<System>, missing: Vec<System> },
    #[error("trajectory {index} of {system}: {source}")]
    Generation {
        system: System,
        index: usize,
        #[source]
        source: PhysicsError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn names(systems: &[System]) -> String {
    systems.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Generation { .. } => EXIT_NUMERIC,
            Error::Training(TrainingError::NonFinite { .. }) => EXIT_NUMERIC,
            Error::Eval(EvalError::Training(TrainingError::NonFinite { .. })) => EXIT_NUMERIC,
            Error::Eval(EvalError::ZeroVariance { .. }) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
