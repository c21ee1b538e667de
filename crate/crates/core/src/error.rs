use std::path::PathBuf;

use remic_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemicError {
    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: corrupt file: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite gradient in parameter group `{group}` (parameter {param})")]
    NonFiniteGradient { group: String, param: String },

    #[error("non-finite loss at iteration {iteration}: {breakdown}")]
    NonFiniteLoss { iteration: u64, breakdown: String },

    #[error("NRMSE is undefined for an all-zero ground truth image")]
    UndefinedNormalization,
}

pub type Result<T> = std::result::Result<T, RemicError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RemicError {
    let path = path.into();
    move |source| RemicError::Io { path, source }
}

pub(crate) fn input(msg: impl Into<String>) -> RemicError {
    RemicError::Input(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> RemicError {
    RemicError::Config(msg.into())
}
