use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lde_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("config syntax: {0}")]
    ConfigSyntax(#[from] toml::de::Error),
    #[error("config serialization: {0}")]
    ConfigWrite(#[from] toml::ser::Error),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
