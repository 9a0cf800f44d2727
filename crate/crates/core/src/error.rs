use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}:{line}: negative throughput sample {value}", path.display())]
    NegativeSample {
        path: PathBuf,
        line: usize,
        value: f64,
    },

    #[error("{}: no samples", path.display())]
    EmptyTrace { path: PathBuf },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("trace `{trace_id}` has {len} samples, at least {min} are required")]
    TraceTooShort {
        trace_id: String,
        len: usize,
        min: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("event log truncated: {0}")]
    TruncatedLog(String),

    #[error("no prediction table entries for trace `{0}`")]
    MissingTrace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
