use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("finite-difference oracle hit a non-finite value at coordinate {index}")]
    Oracle { index: usize },

    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    Format { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: {msg}")]
    Length { path: PathBuf, msg: String },

    #[error("{path}: label {value} at index {index} is outside 0..=9")]
    LabelRange { path: PathBuf, index: usize, value: u8 },

    #[error("non-finite {what} at round {round}, iteration {iteration}")]
    NonFinite {
        what: &'static str,
        round: usize,
        iteration: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
