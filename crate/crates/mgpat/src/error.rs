use std::io;
use std::path::{Path, PathBuf};

/// Errors of the command-line pipeline, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {cause}")]
    File { path: PathBuf, cause: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] mgpat_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn file(path: impl AsRef<Path>, cause: impl ToString) -> Self {
        Error::File {
            path: path.as_ref().to_path_buf(),
            cause: cause.to_string(),
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        move |e| Error::File { path, cause: e.to_string() }
    }

    /// 1 for bad invocations, 2 for bad or missing data, 3 for bugs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::File { .. } | Error::Data(_) | Error::Core(_) => 2,
            Error::Internal(_) => 3,
        }
    }
}
