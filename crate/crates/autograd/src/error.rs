use crate::tensor::Shape;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutogradError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),
}

pub type Result<T> = std::result::Result<T, AutogradError>;

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> AutogradError {
    AutogradError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}
