use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric instability: {0}")]
    NumericInstability(String),

    #[error("stale gradient: Sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}")]
    StaleGradient { iterations: usize, violation: f64 },

    #[error("Sinkhorn did not converge within {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("class {label} has no instances")]
    DegenerateClass { label: usize },

    #[error("head column for label {label} has zero norm")]
    DegenerateHead { label: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema mismatch in {path}: expected {expected}, found {found}")]
    SchemaVersion {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("content hash mismatch for {path}")]
    HashMismatch { path: PathBuf },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("duplicate teacher id {0}")]
    DuplicateTeacher(usize),

    #[error("dangling reference to {0}")]
    DanglingReference(PathBuf),

    #[error("repository {0} is locked by another writer")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
