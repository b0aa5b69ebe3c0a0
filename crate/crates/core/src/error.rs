use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PollError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model is unstable (stability margin {margin:.6})")]
    Unstable { margin: f64 },
    #[error("queue {queue}: own-visit load {load:.6} is not below 1")]
    OwnLoad { queue: usize, load: f64 },
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("linear system is singular or rank deficient ({0})")]
    Singular(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, PollError>;
