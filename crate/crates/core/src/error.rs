use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive argument {arg}")]
    LogNonPositive { arg: f64 },
    #[error("sqrt of negative argument {arg}")]
    SqrtNegative { arg: f64 },
    #[error("tan evaluated at a pole ({arg})")]
    TanPole { arg: f64 },
    #[error("domain error: {msg}")]
    Domain { msg: String },
    #[error("non-finite result")]
    NonFinite,
    #[error("variable {name} not bound")]
    MissingVariable { name: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Checks a slice length, returning the standard mismatch error.
pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), EvalError> {
    if expected == got {
        Ok(())
    } else {
        Err(EvalError::DimensionMismatch { expected, got })
    }
}
