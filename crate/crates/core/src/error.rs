use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error at row {row}, column {col}: {msg}")]
    Schema { row: usize, col: usize, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank-deficient design at location {location}: {msg}")]
    Rank { location: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(row: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            row,
            col,
            msg: msg.into(),
        }
    }

    /// True for errors caused by numerics rather than by inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Rank { .. })
    }
}
