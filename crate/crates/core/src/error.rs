use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot average an empty list of vectors")]
    EmptyInput,

    #[error("worker {worker} out of range for {count} workers")]
    WorkerOutOfRange { worker: usize, count: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {what} at iteration {t}")]
    NonFinite { what: &'static str, t: u64 },

    #[error("synchronization requested at t={t}, which is not a sync point")]
    OffSchedule { t: u64 },

    #[error("gradient history holds {found} steps, expected {expected}")]
    HistoryLength { expected: usize, found: usize },

    #[error("instance too large for the reference oracle: {0}")]
    InstanceTooLarge(String),

    #[error("period map is not contractive for gamma={gamma}")]
    NotContractive { gamma: f64 },

    #[error("partition: {0}")]
    Partition(String),

    #[error("unknown sweep axis `{0}`")]
    InvalidAxis(String),

    #[error("dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
