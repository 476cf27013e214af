use std::path::PathBuf;

use thiserror::Error;

use crate::data::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: zero-norm vector, cosine similarity undefined")]
    ZeroNorm { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on a cleared tape")]
    TapeCleared,
    #[error("function is not deterministic under a fixed seed")]
    NonDeterministic,

    #[error("token id {id} at row {row}, position {col} is outside vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        row: usize,
        col: usize,
        id: usize,
        vocab_size: usize,
    },
    #[error("record {record}: star rating {stars} outside 1..=5")]
    StarOutOfRange { record: usize, stars: i64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} rows malformed (wrong format?)")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("vocabulary hash mismatch: checkpoint has {found}, expected {expected}")]
    VocabHashMismatch { expected: String, found: String },

    #[error("balance target {target} is below the largest class count {max}")]
    TargetBelowMax { target: usize, max: usize },
    #[error("class {0} needs synthetic examples but has no source examples")]
    NoSourceExamples(Label),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            detail: detail.into(),
        }
    }
}
