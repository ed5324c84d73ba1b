use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SrnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SrnnError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error(
        "sequence length T={t} is not divisible by n^k = {n}^{k} = {block}; \
         pad to T={padded} or choose different n, k"
    )]
    Divisibility {
        t: usize,
        n: usize,
        k: usize,
        block: usize,
        padded: usize,
    },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("trace does not match model: {0}")]
    Consistency(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("benchmark harness: {0}")]
    Harness(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SrnnError {
    pub(crate) fn dim(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        SrnnError::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    /// Wraps an I/O error with the path it concerns.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| SrnnError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}
