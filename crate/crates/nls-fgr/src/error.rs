use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("assumption check failed: {0}")]
    Assumption(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn no_convergence(what: impl Into<String>, iterations: usize, residual: f64) -> Self {
        Error::NonConvergence {
            what: what.into(),
            iterations,
            residual,
        }
    }

    /// Process exit code for the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assumption(_) => 2,
            Error::NonConvergence { .. } => 3,
            Error::Usage(_) | Error::InvalidInput(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
