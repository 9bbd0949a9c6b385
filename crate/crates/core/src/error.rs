use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a scalar, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("NaN encountered in input to {0}")]
    NaN(&'static str),
    #[error("loss is not connected to any array that requires a gradient")]
    Unreachable,
    #[error("backward already ran on this tape; call zero_grad first")]
    BackwardTwice,
    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("function under grad check is not deterministic (f(x) = {first} then {second})")]
    Inconsistent { first: f64, second: f64 },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("point {index} at {point:?} lies outside the grid range")]
    OutOfRange { index: usize, point: [f64; 3] },
    #[error("duplicate voxel coordinate {0:?}")]
    DuplicateCoords([i64; 3]),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
