use std::fmt;

use imfield::Error;

/// Everything a command can fail with, mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Bad flags, bad config values, or commands run out of order.
    Usage(String),
    /// A check the command exists to perform did not pass.
    Verification(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 0 success, 1 failure, 2 usage/config, 3 IO/format.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config { .. }) => 2,
            CliError::Core(Error::Io { .. } | Error::Format { .. }) => 3,
            CliError::Core(_) | CliError::Verification(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
