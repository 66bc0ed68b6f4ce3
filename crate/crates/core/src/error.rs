use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PspError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PspError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}:{line}: {msg}", file.display())]
    Data {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Dataset(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PspError {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        PspError::Dimension { op, left, right }
    }

    pub(crate) fn data(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        PspError::Data {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PspError::Io {
            path: path.into(),
            source,
        }
    }
}
