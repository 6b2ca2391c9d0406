//! Error type shared across the crate.

/// Unified error type for all fallible operations in this crate.
#[derive(Debug, thiserror::Error)]
pub enum KvqError {
    /// Shape or size constraint violated (zero dimensions, mismatched
    /// lengths, incompatible matrix shapes).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Malformed value or byte stream (bad magic, bad dtype, truncation,
    /// non-finite float, out-of-range int8 code).
    #[error("format error: {0}")]
    Format(String),

    /// Invalid configuration such as an unknown backend name.
    #[error("configuration error: {0}")]
    Config(String),

    /// A requested workload exceeds an available resource (memory budget).
    #[error("resource error: {0}")]
    Resource(String),

    /// Integer arithmetic overflowed during a size computation.
    #[error("overflow error: {0}")]
    Overflow(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, KvqError>;
