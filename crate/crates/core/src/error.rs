use alloc::string::String;

/// Errors raised by the core model and data algebra.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, ranges or binarity of an input did not satisfy a precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// A configured quantity is inconsistent (divisibility, counts, bounds).
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation that belongs to one model variant was invoked on the other.
    #[error("variant violation: {0}")]
    Variant(String),
    /// A loss term evaluated to NaN or infinity.
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
