use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("REML scoring did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("contrast covariance L Phi L' is singular")]
    SingularContrast,

    #[error("Kenward-Roger adjustment failed: {0}")]
    AdjustmentFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
