use std::path::PathBuf;

use crate::ids::UserId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("self-loop interaction for user {0}")]
    SelfLoop(UserId),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("invalid share event: {0}")]
    InvalidShare(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("cold user {0}: no qualifying listens in window")]
    ColdUser(UserId),
    #[error("missing account record for user {0}")]
    MissingAccount(UserId),
    #[error("missing taste vector for user {0}")]
    MissingVector(UserId),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("forest has no splits")]
    NoSplits,
    #[error("no valid hyperparameter draw: every draw hit a degenerate fold")]
    NoValidDraw,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the configuration rather than the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
