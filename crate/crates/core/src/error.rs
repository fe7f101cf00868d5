use thiserror::Error;

/// Errors produced while ingesting data, validating inputs or configuring a run.
#[derive(Debug, Error)]
pub enum BtmeError {
    #[error("csv line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Statistic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BtmeError>;
