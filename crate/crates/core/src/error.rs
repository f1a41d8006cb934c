use std::io;

use thiserror::Error;

/// Errors raised anywhere in the simulator, the kernels, or the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol misuse: {0}")]
    Protocol(String),

    #[error("index {index} out of bounds (len {len})")]
    Bounds { index: usize, len: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
