//! Error type shared across the crate.
//!
//! Variants map onto the error categories surfaced by the CLI; `category`
//! returns the machine-parseable tag printed on failure.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: missing columns, degenerate split fractions, etc.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file content, pointing at the offending line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Data violates a documented invariant (bad label, arity mismatch, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Data error attributable to a specific input row.
    #[error("data error at row {row}: {message}")]
    DataAt { row: usize, message: String },

    /// Incompatible tensor or vector dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// An op produced NaN or Inf.
    #[error("numeric error: non-finite result in {op}")]
    NonFinite { op: &'static str },

    /// Training could not proceed (single-class data, divergence, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Fitting produced a degenerate model (e.g. empty vocabulary).
    #[error("fit error: {0}")]
    Fit(String),

    /// Lookup of an unknown key (e.g. sentence id in a contextual file).
    #[error("key error: {0}")]
    Key(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word category used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Data(_) | Error::DataAt { .. } => "data",
            Error::Shape(_) => "shape",
            Error::Usage(_) => "usage",
            Error::NonFinite { .. } => "numeric",
            Error::Train(_) => "train",
            Error::Fit(_) => "fit",
            Error::Key(_) => "key",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
