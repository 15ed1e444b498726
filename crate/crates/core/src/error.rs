use alloc::string::String;

/// Errors reported by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape, grid, range).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A computation produced a non-finite value or a factorization broke down.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! numeric {
    ($($arg:tt)*) => {
        $crate::error::Error::NumericFailure(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use numeric;
