use std::io;
use std::path::PathBuf;

/// Failure of a command, mapped onto the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A verified property did not hold.
    #[error("violation: {0}")]
    Violation(String),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed input; `location` is `byte N` for binary data and `line N`
    /// for text.
    #[error("{}: {location}: {message}", path.display())]
    Parse { path: PathBuf, location: String, message: String },
    #[error(transparent)]
    Core(#[from] fpstab_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
