use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),
    /// Model, profile or shape configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed bitstream or weights file.
    #[error("format error: {0}")]
    Format(String),
    /// Bitstream was produced with different model weights.
    #[error("wrong model: bitstream digest {expected:016x}, weights digest {actual:016x}")]
    WrongModel { expected: u64, actual: u64 },
    /// Entropy coder failure (bad table, truncated payload, ...).
    #[error("coding error: {0}")]
    Coding(String),
    /// Non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! usage {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
macro_rules! config {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}
macro_rules! coding {
    ($($arg:tt)*) => { $crate::error::Error::Coding(format!($($arg)*)) };
}
macro_rules! numeric {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(format!($($arg)*)) };
}
pub(crate) use {coding, config, format_err, numeric, usage};
