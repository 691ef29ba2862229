//! Error type shared across the pipeline.

use alloc::string::String;
use core::fmt;

/// Failure modes of the corpus and evaluation pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid configuration (empty pools, inverted ranges, bad widths).
    Config(String),
    /// Input too small for the requested operation.
    Sizing(String),
    /// Task cannot be built from the sampled data (e.g. too few distinct
    /// target values for the requested class count).
    Degenerate(String),
    /// Token budget too small for even the minimal prompt.
    Budget(String),
    /// Metric inputs violate a precondition (length mismatch, bad priors).
    Validation(String),
    /// Protocol violation (wrong query count, inconsistent variant coverage).
    Protocol(String),
    /// Feature-dimension mismatch between fitted model and input.
    Schema(String),
    /// Prompt encoding failure.
    Encoding(String),
    /// Backend (predictor) failure after retries.
    Backend(String),
    /// Invariant breach that should be unreachable.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Sizing(m) => write!(f, "sizing error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Budget(m) => write!(f, "budget error: {m}"),
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::Protocol(m) => write!(f, "protocol error: {m}"),
            Error::Schema(m) => write!(f, "schema error: {m}"),
            Error::Encoding(m) => write!(f, "encoding error: {m}"),
            Error::Backend(m) => write!(f, "backend error: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
