use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] posepilot_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("image `{}`: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("backend `{backend}`: {message}")]
    Backend { backend: String, message: String },

    #[error("backend `{0}` does not support attribution")]
    Unsupported(String),

    #[error("unknown backend `{name}` (registered: {known})")]
    UnknownBackend { name: String, known: String },

    #[error("unknown prompt set `{0}`")]
    UnknownPromptSet(String),

    #[error("prompt set `{id}` is at revision {current}, edit was based on {base}")]
    RevisionConflict { id: String, base: u64, current: u64 },

    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn backend(backend: &str, message: impl Into<String>) -> Self {
        Error::Backend { backend: backend.to_string(), message: message.into() }
    }
}
