use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Validation(_) | CliError::Schema(_) => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            context: path.display().to_string(),
            source,
        }
    }

    /// Library errors: I/O failures keep exit code 1, everything else is a
    /// validation failure.
    pub fn library(path: &Path, err: bayesmem::Error) -> Self {
        match err {
            bayesmem::Error::Io(source) => CliError::io(path, source),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        }
    }
}

impl From<bayesmem::Error> for CliError {
    fn from(err: bayesmem::Error) -> Self {
        match err {
            bayesmem::Error::Io(source) => CliError::Io {
                context: "i/o".into(),
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
