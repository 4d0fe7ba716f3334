use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument to a numeric operation (non-finite input, shape mismatch).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration that fails validation before anything runs.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numeric failure at runtime (failed factorization, non-finite result).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dynamics step failed; `step` is the offending time index.
    #[error("dynamics error at step {step}: {message}")]
    Dynamics { step: usize, message: String },

    /// MDN training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    TrainingDiverged { epoch: usize, message: String },

    /// Posterior construction failed.
    #[error("inference error: {0}")]
    Inference(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 2 for configuration/usage problems,
    /// 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
