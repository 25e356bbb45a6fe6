//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    Shape(String),
    /// Token id outside the vocabulary.
    Vocab { id: u32, vocab: usize },
    /// Invalid configuration or incompatible components.
    Config(String),
    /// A value became NaN or infinite during computation.
    NonFinite(String),
    /// An operation received no usable input (empty set, all labels ignored).
    Empty(String),
    /// A caller-side contract was violated.
    Contract(String),
    /// Data generation exhausted its retry bound.
    Generation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Vocab { id, vocab } => {
                write!(f, "vocab error: token id {id} out of range for vocab of {vocab}")
            }
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Empty(m) => write!(f, "empty input: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
