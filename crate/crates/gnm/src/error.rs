use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GnmError {
    #[error(transparent)]
    Core(#[from] gnm_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run interrupted after division {0}")]
    Interrupted(usize),
}

pub type Result<T> = std::result::Result<T, GnmError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> GnmError {
    let path = path.into();
    move |source| GnmError::Io { path, source }
}
