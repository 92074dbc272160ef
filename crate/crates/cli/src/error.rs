use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or malformed / missing input.
    #[error("{0}")]
    Invalid(String),
    /// Anything else, including failures while writing outputs.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invalid(_) => ExitCode::from(2),
            CliError::Internal(_) => ExitCode::from(1),
        }
    }
}

/// Library errors reaching the CLI stem from the inputs it was given.
impl From<uqsup_core::Error> for CliError {
    fn from(e: uqsup_core::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}
