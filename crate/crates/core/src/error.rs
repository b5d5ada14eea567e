use thiserror::Error;

/// Errors raised by the library. Validation failures (bad shapes, bad
/// hyperparameters, infeasible starting points) are distinguished from
/// runtime failures so the CLI can map them onto different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible iterate: {0}")]
    Infeasible(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate component: responsibility mass of component {component} is zero")]
    DegenerateComponent { component: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than by the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::Infeasible(_)
                | Error::Parse(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
