use thiserror::Error;

/// Errors produced by the denoising library.
#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A singular value that was required to carry signal sits at or below
    /// the bulk edge `1 + sqrt(gamma)`.
    #[error(
        "singular value {value} at index {index} is not above the detection threshold {threshold}"
    )]
    BelowDetectionThreshold {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("ill-conditioned recovery: cosine of component {component} is {cosine:e}")]
    IllConditionedRecovery { component: usize, cosine: f64 },

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, DenoiseError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DenoiseError {
    DenoiseError::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> DenoiseError {
    DenoiseError::DimensionMismatch(msg.into())
}
