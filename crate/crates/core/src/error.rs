use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid criterion {input:?}: {reason}")]
    InvalidCriterion { input: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: u64,
        message: String,
    },

    #[error("data shape does not match model: {0}")]
    ShapeMismatch(String),

    #[error("posterior is not finite at every starting point: {0}")]
    NonFinitePosterior(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("grid has {cells} cells, limit is {limit}")]
    GridTooLarge { cells: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinitePosterior(_)
                | Error::UndefinedRatio(_)
                | Error::DegenerateConditioning(_)
        )
    }
}
