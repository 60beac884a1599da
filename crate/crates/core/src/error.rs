//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("uninitialized gradient: {0}")]
    UninitializedGrad(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("sequence length error: {0}")]
    SeqLen(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("corruption error: {0}")]
    Corruption(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
