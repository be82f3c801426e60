use thiserror::Error;

/// Errors surfaced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand shapes are incompatible with the requested operation.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument value violates the operation's preconditions.
    #[error("{op}: invalid argument: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward: loss must be a scalar, got {numel} elements")]
    NonScalarLoss { numel: usize },

    /// `backward` was called on a graph with no differentiable path to a leaf.
    #[error("backward: no requires_grad leaf is reachable from the loss")]
    NoGradPath,
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArg { op, detail: detail.into() }
    }
}
