use std::path::PathBuf;

/// Errors produced by the evaluation harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed input at {pointer}: {message}")]
    MalformedInput { pointer: String, message: String },

    #[error("duplicate video id {0:?}")]
    DuplicateId(String),

    #[error("bad split ratios: {0}")]
    BadRatios(String),

    #[error("text is empty")]
    EmptyText,

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider {0:?} does not support token granularity")]
    UnsupportedGranularity(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("no reference texts to score against")]
    NoReferences,

    #[error("video {0:?} has no domain label")]
    MissingDomain(String),

    #[error("video domain {video:?} does not match pool domain {pool:?}")]
    DomainMismatch { video: String, pool: String },

    #[error("domain pool for {0:?} is empty")]
    EmptyPool(String),

    #[error("backend {backend:?} unreachable: {message}")]
    BackendUnreachable { backend: String, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unresolved items under post-discussion resolution: {0:?}")]
    UnresolvedItems(Vec<String>),

    #[error("score row references unknown record {0}")]
    DanglingScore(String),

    #[error("table is empty")]
    EmptyTable,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::MalformedInput {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
