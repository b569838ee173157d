use std::io;

use thiserror::Error;

/// Failure categories surfaced to callers (and mapped to CLI exit
/// codes: config 2, data 3, numeric 4). Shape and tape misuse inside
/// the tensor core are contract violations and panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
