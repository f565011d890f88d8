use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric domain error in `{op}`: argument {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("non-finite adjoint at node {node} (`{op}`)")]
    Overflow { node: usize, op: &'static str },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("perturbation `{0}` requires a gradient")]
    MissingGradient(&'static str),

    #[error("degenerate range for {0}")]
    DegenerateRange(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("search space too large: {states} evaluations exceeds the bound of {bound}")]
    SearchSpace { states: u128, bound: u128 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
