use std::path::PathBuf;

use crate::transport::TransportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fedtherm_core::Error),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// Invalid configuration; `field` is a dotted path into the config document.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("federation failed: no client was reachable in any round")]
    FederationFailed,
    #[error("client `{client}`: {message}")]
    Client { client: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// Whether this error comes from bad user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parse { .. } | Error::Core(fedtherm_core::Error::Config(_)))
    }
}
