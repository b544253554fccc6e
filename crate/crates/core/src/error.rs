use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model graph: {0}")]
    Graph(String),
    #[error("output selector {selector} out of range for {len} logits")]
    Selector { selector: usize, len: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch in model file")]
    Checksum,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
