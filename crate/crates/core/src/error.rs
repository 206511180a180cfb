use alloc::string::String;
use core::fmt;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside its documented domain.
    InvalidInput(String),
    /// The input is well-formed but the quantity is undefined for it
    /// (for example a spread statistic over identical risks).
    DegenerateInput(String),
    /// The exact active-set solver would need to enumerate more clamp sets
    /// than allowed.
    CapExceeded { n: usize, cap: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::CapExceeded { n, cap } => write!(
                f,
                "active-set enumeration over {n} domains exceeds the cap of {cap}; \
                 raise alpha above the closed-form threshold or raise the cap"
            ),
        }
    }
}

impl core::error::Error for Error {}
