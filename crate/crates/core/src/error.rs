use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: unparseable timestamp {value:?}")]
    BadTimestamp {
        path: PathBuf,
        line: u64,
        value: String,
    },
    #[error("invalid ICD-9 codes: {}", .0.join(", "))]
    InvalidCodes(Vec<String>),
    #[error("code index {index} has no ontology mapping")]
    UnmappedCode { index: usize },
    #[error("code index {index} out of range for vocabulary of {size}")]
    CodeOutOfRange { index: usize, size: usize },
    #[error("split ratios must sum to 1, got {0}")]
    BadRatios(f64),
    #[error("mask fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
