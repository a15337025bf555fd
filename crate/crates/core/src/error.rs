use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("element count mismatch: shape {shape:?} needs {expected} values, got {found}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("empty attention: every position of {context} is masked")]
    EmptyAttention { context: &'static str },

    #[error("vocabulary error: id {id} out of range for table with {size} rows")]
    Vocabulary { id: usize, size: usize },

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("invalid box {bbox:?}: {reason}")]
    InvalidBox { bbox: [f32; 4], reason: &'static str },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter {param}")]
    NanGradient { param: String },

    #[error("checkpoint is missing parameter {0}")]
    MissingParameter(String),

    #[error("parameter {name} shape mismatch: model has {expected:?}, checkpoint has {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("vocabulary hash mismatch: checkpoint {expected}, data {found}")]
    VocabMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Data(_)
                | Error::InvalidBox { .. }
                | Error::Json(_)
                | Error::MissingParameter(_)
                | Error::ParamShape { .. }
                | Error::VocabMismatch { .. }
        )
    }
}
