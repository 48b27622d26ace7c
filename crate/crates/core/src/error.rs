use thiserror::Error;

/// Errors surfaced by every layer of the pipeline, from WAV parsing up to
/// training and checkpoint I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A computation produced NaN or Inf, or diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value or combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Bad input data (labels out of range, empty datasets, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed or unsupported WAV content. `offset` is the byte position
    /// at which the problem was detected.
    #[error("wav parse error at byte {offset}: {reason}")]
    WavParse { offset: u64, reason: String },

    /// Optimizer misuse, e.g. stepping a parameter that has no gradient.
    #[error("optimizer error: {0}")]
    Optimizer(String),

    /// Checkpoint serialization problems: version mismatch, truncation,
    /// corrupt payload. The message names the offending field.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Feature cache problems, including stale-fingerprint detection.
    #[error("cache error: {0}")]
    Cache(String),

    /// API misuse, e.g. calling the reconstruction head when it is disabled.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
