use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("row {row} has no finite entries after masking")]
    EmptySoftmaxRow { row: usize },

    #[error("zero-norm row {row} in cosine similarity input")]
    ZeroNormRow { row: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint tensor `{name}` has shape {got:?}, header/config expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint header is malformed: {0}")]
    MalformedHeader(String),

    #[error("probe batches differ between response matrices ({left:#018x} vs {right:#018x})")]
    BatchMismatch { left: u64, right: u64 },

    #[error("identity-dimension intersection is empty")]
    InsufficientOverlap,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
