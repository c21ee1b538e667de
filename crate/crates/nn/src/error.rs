use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("variable #{index} does not belong to this graph")]
    NotInGraph { index: usize },

    #[error("variable #{index} is a constant and carries no gradient")]
    NoGradient { index: usize },

    #[error("backward seed must match output shape {expected:?}, got {got:?}")]
    BadSeed {
        expected: [usize; 4],
        got: [usize; 4],
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}
