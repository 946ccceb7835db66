use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration invariant does not hold.
    #[error("invalid config: {0}")]
    Config(String),
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Two partial results with different experiment descriptors.
    #[error("descriptor mismatch: {0}")]
    Mismatch(String),
    /// Rejection sampling stalled.
    #[error("rejection sampling failed: {0}")]
    Rejection(String),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$kind(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
