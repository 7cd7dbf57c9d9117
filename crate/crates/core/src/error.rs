use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quantile curve has no knots")]
    EmptyCurve,

    #[error("quantile level {level} at knot {index} is outside (0, 1)")]
    LevelOutOfRange { index: usize, level: f64 },

    #[error("duplicate quantile level {level}")]
    DuplicateLevel { level: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid support [{lo}, {hi}]")]
    InvalidSupport { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("site order mismatch: {0}")]
    SiteOrder(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("read past the forecast cutoff: {0}")]
    LookAhead(String),

    #[error("unknown site id {0:?}")]
    UnknownSite(String),

    #[error("unknown region {requested:?}; available: {}", available.join(", "))]
    UnknownRegion {
        requested: String,
        available: Vec<String>,
    },

    #[error("{} malformed row(s):\n{}", .0.len(), .0.join("\n"))]
    Malformed(Vec<String>),

    #[error("config: {0}")]
    Config(String),

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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
