use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("group order mismatch: {0} vs {1}")]
    GroupMismatch(usize, usize),
    #[error("group index {index} out of range for Z_{order}")]
    IndexOutOfRange { index: usize, order: usize },
    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),
    #[error("unsupported representation for this operation: {0}")]
    UnsupportedRepresentation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operation not recorded on the tape: {0}")]
    Unrecorded(String),
    #[error("non-finite loss {loss} at iteration {iteration} (training pair {pair})")]
    NonFinite { loss: f64, iteration: usize, pair: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
