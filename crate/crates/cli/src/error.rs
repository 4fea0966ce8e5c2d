use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with a fixed process exit status.
#[derive(Debug)]
pub enum CliError {
    /// A self-check ran but did not meet its tolerance.
    CheckFailed(String),
    /// Bad arguments or configuration.
    Usage(String),
    /// A solver or I/O failure while running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::CheckFailed(msg) => write!(f, "check failed: {msg}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl From<matheron_core::Error> for CliError {
    fn from(e: matheron_core::Error) -> Self {
        match e.root_cause() {
            matheron_core::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}
