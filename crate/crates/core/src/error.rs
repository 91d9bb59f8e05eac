use thiserror::Error;

/// Errors raised by the analytical models, the simulator and the CLI surface.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The input is valid but the quantity is undefined there (zero rate, PGF pole, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A queue has no stationary regime for the given parameters.
    #[error("unstable configuration: {0}")]
    Instability(String),

    /// An iterative solver ran out of budget.
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The alternating burst-table search kept changing its table.
    #[error("policy search did not converge within {iterations} iterations")]
    PolicyNonConvergence { iterations: usize },

    /// A structural identity of the stationary distribution failed.
    #[error("balance equation violated: {0}")]
    Balance(String),

    /// Scenario file or CLI parse failure.
    #[error("config error: {0}")]
    Config(String),

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Domain(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::NonConvergence { .. } | Error::PolicyNonConvergence { .. } | Error::Balance(_) => 3,
            Error::Instability(_) => 4,
        }
    }
}
