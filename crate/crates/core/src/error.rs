use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("modality `{modality}` is not valid for {purpose} prompts")]
    InvalidModality {
        modality: &'static str,
        purpose: &'static str,
    },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {kind} data: {message}")]
    Format { kind: &'static str, message: String },

    #[error("provider error: {0}")]
    Provider(String),
}

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used by the CLI's single-line failure report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidModality { .. } => "invalid_modality",
            Error::DegenerateVariance(_) => "degenerate_variance",
            Error::Config { .. } => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Provider(_) => "provider",
        }
    }
}
