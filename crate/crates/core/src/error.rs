use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("metric `{metric}` is undefined: denominator is zero")]
    UndefinedMetric { metric: &'static str },

    #[error("labels are not binary: found {0} distinct values")]
    NonBinaryLabels(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{algorithm} did not converge after {iterations} iterations")]
    NoConvergence {
        algorithm: &'static str,
        iterations: usize,
    },

    #[error("grid mismatch: model expects {expected} points, spectrum has {actual}; resample the spectrum onto the model grid first")]
    GridMismatch { expected: usize, actual: usize },

    #[error("model is not fitted")]
    NotFitted,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{agent} agent cannot take a {actual} record")]
    TypeMismatch { agent: &'static str, actual: &'static str },

    #[error("agent `{0}` has no model loaded")]
    NotInitialized(String),

    #[error("agent `{0}` has not been told anything yet")]
    NoData(String),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
