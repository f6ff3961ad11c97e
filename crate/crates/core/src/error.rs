use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("unknown class label {0}")]
    UnknownClass(usize),

    #[error("context does not match the classifier family: {0}")]
    ContextMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature did not converge within {panels} panels (error estimate {estimate:e})")]
    QuadratureNotConverged { panels: usize, estimate: f64 },

    #[error("non-finite state at step {step} (sigma = {sigma})")]
    NonFiniteState { step: usize, sigma: f64 },

    #[error("effective sample size collapsed to {ess} at step {step}")]
    EssCollapse { step: usize, ess: f64 },

    #[error("all particle weights are zero")]
    DegenerateWeights,

    #[error("empty sample set")]
    EmptySample,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 4,
            Error::Config(_)
            | Error::InvalidSchedule(_)
            | Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::UnknownClass(_)
            | Error::ContextMismatch(_)
            | Error::Unsupported(_) => 2,
            Error::NonFiniteInput
            | Error::QuadratureNotConverged { .. }
            | Error::NonFiniteState { .. }
            | Error::EssCollapse { .. }
            | Error::DegenerateWeights
            | Error::EmptySample => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
