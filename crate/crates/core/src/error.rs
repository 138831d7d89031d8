use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("parse error at row {row}, column `{column}`: cannot parse `{value}` as a finite real")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unsupported labels: expected exactly two distinct values, found {found:?}")]
    UnsupportedLabels { found: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("privacy budget exhausted: composed delta {delta} >= 1")]
    BudgetExhausted { epsilon: f64, delta: f64 },

    #[error("no clients available")]
    NoClients,

    #[error("no updates to aggregate")]
    NoUpdates,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("round {round}, client {client}: {source}")]
    Client {
        round: u32,
        client: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: u32,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
