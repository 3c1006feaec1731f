use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine, file I/O and the command front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A malformed file. `row`/`col` are 1-based when the problem can be
    /// pinned to a cell.
    #[error("format error in {path:?}{}: {msg}", position(.row, .col))]
    Format {
        path: PathBuf,
        row: Option<usize>,
        col: Option<usize>,
        msg: String,
    },

    /// Duplicated computation disagreed on every permitted attempt.
    #[error("persistent DMR mismatch after {attempts} attempts ({site})")]
    DmrPersistent { attempts: usize, site: String },

    #[error("no feasible tile configuration for shape {0}")]
    NoFeasibleConfig(String),

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn position(row: &Option<usize>, col: &Option<usize>) -> String {
    match (row, col) {
        (Some(r), Some(c)) => format!(" at ({r},{c})"),
        (Some(r), None) => format!(" at line {r}"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
