use std::io;

use thiserror::Error;

/// Errors produced by the detector pipeline.
///
/// The variants line up with the exit-code classes of the command-line tool:
/// usage problems, bad data, and numeric failures are kept apart so callers
/// can react differently.
#[derive(Debug, Error)]
pub enum Error {
    /// Prototype count incompatible with the embedding dimension.
    #[error("dimensionality error: {0}")]
    Dimension(String),

    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or insufficient input data (manifests, images, corpora).
    #[error("data error: {0}")]
    Data(String),

    /// Model/prototype shape disagreement.
    #[error("model error: {0}")]
    Model(String),

    /// Non-finite values during optimization.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Unreadable or unsupported file format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}

pub(crate) use bail;
