use thiserror::Error;

/// Crate-wide error type. The CLI maps each variant to a fixed exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input to a library operation (bad colour index, wrong arity, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Numerical failure: divergence, missing bracket, non-convergence.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A computational budget was exhausted before an exact answer was found.
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config/input, 3 numeric, 4 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
            Error::Budget(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
