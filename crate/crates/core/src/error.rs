use std::io;

use thiserror::Error;

/// Errors raised by the library and propagated to the command line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("grammar: {0}")]
    Grammar(String),

    #[error("tree is not binary: node with {0} children")]
    NotBinary(usize),

    #[error("tree depth {depth} must be below max depth {max_depth}")]
    TooDeep { depth: usize, max_depth: u32 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("token mismatch at sentence {index}: {msg}")]
    TokenMismatch { index: usize, msg: String },

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by a violated internal invariant rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
