use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input shorter than one analysis window ({samples} < {window} samples)")]
    TooShort { samples: usize, window: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid time span [{start}, {end}): end must be greater than start")]
    InvalidSpan { start: f64, end: f64 },

    #[error("{path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("DER is undefined: reference contains no speech")]
    UndefinedDer,

    #[error("VB-HMM produced a non-finite ELBO at iteration {iteration}")]
    NonFiniteElbo { iteration: usize },

    #[error("could not reach target fractions after {attempts} attempts (silence {silence:.3}, overlap {overlap:.3})")]
    Infeasible {
        attempts: usize,
        silence: f64,
        overlap: f64,
    },

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Tag an error with the pipeline block it came from.
    pub fn in_block(self, block: usize) -> Self {
        match self {
            e @ Error::Block { .. } => e,
            e => Error::Block {
                block,
                source: Box::new(e),
            },
        }
    }
}
