use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at step {step} (last finite loss: {last_finite_loss:?})")]
    TrainingDivergence {
        step: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("integration diverged at step {step}")]
    IntegrationDivergence { step: usize },

    #[error("metric is not positive definite")]
    DegenerateMetric,

    #[error("projection failed: {0}")]
    ProjectionFailure(String),

    #[error("barrier filter failed: {0}")]
    FilterFailure(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("unsupported render: {0}")]
    UnsupportedRender(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
