use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("singular branch {index} ({from} -> {to}): r = x = 0")]
    SingularBranch { index: usize, from: usize, to: usize },

    #[error("power flow diverged after {iterations} iterations (residual {residual:.3e})")]
    PfDivergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian (voltage collapse proximity)")]
    SingularJacobian,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
