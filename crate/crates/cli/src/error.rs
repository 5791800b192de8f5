use std::path::{Path, PathBuf};

use serde::Serialize;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lmconf_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<lmconf_core::dataio::DataError> for CliError {
    fn from(e: lmconf_core::dataio::DataError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<lmconf_core::descriptors::DescriptorError> for CliError {
    fn from(e: lmconf_core::descriptors::DescriptorError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<lmconf_core::metrics::MetricsError> for CliError {
    fn from(e: lmconf_core::metrics::MetricsError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "ConfigError",
            CliError::MissingInput(_) => "MissingInput",
            CliError::Io { .. } => "IoError",
        }
    }

    pub fn report(&self, command: &str) -> ErrorReport {
        ErrorReport {
            command: command.to_string(),
            kind: self.kind().to_string(),
            message: self.to_string(),
        }
    }
}

/// Machine-readable failure summary, written as `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub command: String,
    pub kind: String,
    pub message: String,
}
