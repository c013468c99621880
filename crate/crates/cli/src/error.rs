use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },

    #[error("unknown config key `{key}` ({origin})")]
    UnknownKey { key: String, origin: String },

    #[error("config key `{key}` ({origin}): {msg}")]
    BadValue { key: String, origin: String, msg: String },

    #[error("unknown experiment `{name}` (known: {known})")]
    UnknownExperiment { name: String, known: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("csv {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("plot {}: {msg}", path.display())]
    Plot { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] gde_core::Error),

    #[error("{0}")]
    Failed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
