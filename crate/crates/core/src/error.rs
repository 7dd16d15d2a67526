use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model construction, analysis, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is singular or nearly singular: {0}")]
    Singular(String),

    #[error("resolvent is singular at omega = {omega} rad/s ({context})")]
    SingularResolvent { omega: f64, context: &'static str },

    #[error("non-finite result in {0}")]
    NonFinite(String),

    #[error("simulation diverged at step {step} (state magnitude exceeded {limit:.1e})")]
    Diverged {
        step: usize,
        limit: f64,
        /// Trace up to (and excluding) the diverging step.
        partial: Box<crate::sim::ClosedLoopTrace>,
    },

    #[error("model input rejected: {0}")]
    Rejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
