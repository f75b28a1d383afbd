use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(optex_core::Error),

    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    /// 2 configuration, 3 numeric or I/O failure, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(e) if e.is_config() => 2,
            CliError::Solver(_) | CliError::Io { .. } => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<optex_core::Error> for CliError {
    fn from(e: optex_core::Error) -> Self {
        CliError::Solver(e)
    }
}
