use thiserror::Error;

use crate::data::DataError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("distribution family mismatch: {0:?} vs {1:?}")]
    FamilyMismatch(crate::distributions::Family, crate::distributions::Family),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("cache does not match this network or batch")]
    StaleCache,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
