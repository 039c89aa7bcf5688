use thiserror::Error;

/// Errors shared by all numeric modules.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data violates an invariant (NaN, Inf, bad buffer length).
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
