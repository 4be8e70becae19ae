use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A decomposition failed to converge.
    #[error("{op} failed to converge on a {rows}x{cols} matrix")]
    Numerical {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    /// Shapes, symmetry or other structural requirements of an input were not met.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is rank deficient where full rank is required.
    #[error("degenerate input{}: {what}", .user.map(|k| format!(" (user {k})")).unwrap_or_default())]
    Degenerate { what: String, user: Option<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A convex subproblem could not be certified feasible.
    #[error("subproblem infeasible in round {round}: {detail}")]
    Infeasible { round: usize, detail: String },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {}: {detail}", .path.display())]
    Parse { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
