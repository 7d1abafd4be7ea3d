use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{context}{source}")]
    Core { context: String, source: trajgp::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn file(path: &Path, source: trajgp::Error) -> Self {
        CliError::Core {
            context: format!("{}: ", path.display()),
            source,
        }
    }

    /// 1 for numerical failures, 2 for configuration and IO errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 1,
            _ => 2,
        }
    }
}

impl From<trajgp::Error> for CliError {
    fn from(source: trajgp::Error) -> Self {
        CliError::Core {
            context: String::new(),
            source,
        }
    }
}
