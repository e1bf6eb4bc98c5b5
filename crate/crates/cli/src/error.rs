use std::path::{Path, PathBuf};

use compavatar_core::Error as CoreError;
use thiserror::Error;

/// Failures of the command line and its file formats. Each maps to a process
/// exit status through [`CliError::exit_code`].
#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration problems, all violations listed.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("stage '{required}' required before '{stage}'")]
    Prerequisite { stage: String, required: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file exists but cannot be decoded.
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("workspace is locked by {0}; remove the file if no other run is active")]
    Locked(PathBuf),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// 0 ok, 2 configuration, 3 missing prerequisite, 4 oracle, 5 numeric
    /// failure, 1 anything else (IO, corrupt files, a held lock).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CoreError::Config(_) | CoreError::Parameter(_)) => 2,
            CliError::Prerequisite { .. } => 3,
            CliError::Core(CoreError::Oracle { .. }) => 4,
            CliError::Core(CoreError::Numeric { .. }) => 5,
            _ => 1,
        }
    }
}
