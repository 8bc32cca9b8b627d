//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration failed validation before any data was touched.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("edge file {0} contains no edges")]
    EmptyGraph(PathBuf),

    /// Input data is inconsistent (missing ids, wrong shapes, corrupt files).
    #[error("data error: {0}")]
    Data(String),

    #[error("query {query}: only {available} neighbors available, need {k}")]
    InsufficientNeighbors { query: String, k: usize, available: usize },

    #[error("query {query}: {message}")]
    Mining { query: String, message: String },

    /// Finite-difference checks refuse points on a hinge or norm kink.
    #[error("rejected gradient-check fixture: {0}")]
    RejectedFixture(String),

    #[error("stage `{stage}` requires missing artifact {}", path.display())]
    Dependency { stage: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Dependency { .. } => 4,
            _ => 3,
        }
    }
}
