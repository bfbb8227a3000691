use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,
    #[error("loss must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("checkpoint does not match model: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, got: impl ToString) -> NetError {
    NetError::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
