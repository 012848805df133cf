use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("level k = {k} out of range for sample size n = {n}")]
    LevelOutOfRange { k: usize, n: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty cluster: no coordinate above the support tolerance")]
    EmptyCluster,

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    /// Stable machine-readable tag, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::LevelOutOfRange { .. } => "level-out-of-range",
            Error::Degenerate(_) => "degenerate-input",
            Error::EmptyCluster => "empty-cluster",
            Error::OutOfRange(_) => "out-of-range",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Parse { .. } => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
