use thiserror::Error;

use crate::prior::RejectionStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0} requires a data hint to sample its parameters")]
    MissingDataHint(&'static str),

    #[error("correlation key `{name}` was first used with {existing} categories, now requested with {requested}")]
    CategoryConflict {
        name: String,
        existing: usize,
        requested: usize,
    },

    #[error("attention row {row} has every key masked")]
    AllMasked { row: usize },

    #[error("dataset generation exhausted {attempts} attempts ({stats})")]
    RetriesExhausted {
        attempts: usize,
        stats: RejectionStats,
    },

    #[error("missing tensor `{0}` in weight manifest")]
    MissingTensor(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
