use alloc::string::String;

/// Errors raised by the numeric kernels and graph passes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A float format description is not usable.
    #[error("invalid float format: {0}")]
    Format(String),
    /// A graph is malformed or a pass cannot be applied to it.
    #[error("graph error: {0}")]
    Graph(String),
    /// An einsum equation could not be parsed or is not supported.
    #[error("einsum error: {0}")]
    Einsum(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}

pub(crate) use bail;
