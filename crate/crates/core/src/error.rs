use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("unknown model index {0}")]
    UnknownModel(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error("training diverged at iteration {iteration}: negative ELBO {value} (initial {initial})")]
    Diverged {
        iteration: usize,
        value: f64,
        initial: f64,
    },

    #[error("insufficient data for pair {from}->{to}: {reason}")]
    InsufficientData {
        from: usize,
        to: usize,
        reason: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Checkpoint(_) => 4,
            _ => 3,
        }
    }
}
