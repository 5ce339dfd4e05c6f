use std::path::Path;

use thiserror::Error;
use watchforge_core::Error as CoreError;

/// CLI failure, mapped onto a stable exit code and a one-line message prefix.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }

    pub fn prefix(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ERR_CONFIG",
            CliError::Io(_) => "ERR_IO",
            CliError::Pipeline(_) => "ERR_PIPELINE",
        }
    }

    /// Single line, newlines folded, ready for stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("{}: {msg}", self.prefix())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidViewpoint(_)
            | CoreError::InvalidStrategy(_)
            | CoreError::InvalidPrimitive(_)
            | CoreError::InvalidConfig(_)
            | CoreError::PrimitiveOutOfBounds { .. }
            | CoreError::EvenKernel(_) => CliError::Config(e.to_string()),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
