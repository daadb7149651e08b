use thiserror::Error;

/// Errors raised by the integrators, kernels and problem builders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {0} overflows the {1} range")]
    OverflowToInfinity(f64, &'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot squeeze a zero matrix")]
    ZeroMatrix,
    #[error("invalid stage count {s} for order {p} (minimum {min})")]
    InvalidStages { p: u8, s: usize, min: usize },
    #[error("invalid damping {0}")]
    InvalidDamping(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("strategy {strategy} unavailable: {reason}")]
    StrategyUnavailable { strategy: &'static str, reason: &'static str },
    #[error("problem is not linear")]
    NonLinearProblem,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown format {0}")]
    UnknownFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
