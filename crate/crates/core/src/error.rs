use thiserror::Error;

/// Errors produced by the solver stack and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported problem: {0}")]
    UnsupportedProblem(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    /// A step produced NaN or infinite values.
    #[error("step diverged at t = {t}, dt = {dt}")]
    StepDiverged { t: f64, dt: f64 },

    #[error("step size underflow at t = {t}, dt = {dt}")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
