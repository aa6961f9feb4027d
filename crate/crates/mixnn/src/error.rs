use std::io;
use std::path::{Path, PathBuf};

/// Failures surfaced by the command-line tools, each tied to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Diverged(String),

    #[error(transparent)]
    Core(mixnn_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Format { .. } => EXIT_IO,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.as_ref().to_path_buf(), message: message.into() }
    }
}

impl From<mixnn_core::Error> for CliError {
    fn from(e: mixnn_core::Error) -> Self {
        match e {
            mixnn_core::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
