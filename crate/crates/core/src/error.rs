use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum PixcueError {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probability volume not normalized at pixel {pixel}: sum = {sum}")]
    NotNormalized { pixel: usize, sum: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: Vec<crate::net::EpochLoss>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PixcueError>;

impl PixcueError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PixcueError::Io {
            path: path.into(),
            source,
        }
    }
}
