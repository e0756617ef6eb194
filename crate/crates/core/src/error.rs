//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed container (bad magic, truncated chunk, missing chunk).
    #[error("wav format error: {0}")]
    WavFormat(String),

    /// Well-formed container the crate deliberately does not handle
    /// (non-PCM encodings, bit depths other than 16, more than 2 channels).
    #[error("unsupported wav encoding: {0}")]
    UnsupportedFormat(String),

    /// Resampling request that is not an integer-factor decimation.
    #[error("unsupported rate conversion: {0}")]
    UnsupportedRate(String),

    #[error("sample rate mismatch: {0}")]
    RateMismatch(String),

    /// Input that makes the requested quantity undefined (zero power,
    /// zero variance, empty buffers).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("inconsistent frames: {0}")]
    InconsistentFrames(String),

    /// Invalid model description (channel chain broken, bad output layer).
    #[error("model spec error: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Batch normalization asked to compute batch statistics over a
    /// single sample.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// A tape that does not belong to the model it is replayed against.
    #[error("tape mismatch: {0}")]
    Tape(String),

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("empty dataset: {0}")]
    EmptyInput(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
