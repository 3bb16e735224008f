//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal is silent (rms ≤ 1e-9)")]
    SilentSignal,
    #[error("channel lengths or sample rates differ: {0}")]
    MismatchedLength(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("filter frequency out of range: {fc} Hz at fs {fs} Hz")]
    FrequencyOutOfRange { fc: f64, fs: f64 },
    #[error("hardness must lie in [0, 2], got {0}")]
    HardnessOutOfRange(f64),
    #[error("operation is not a registered tape primitive: {0}")]
    UnregisteredPrimitive(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("song shorter than requested clip duration: {0}")]
    SongTooShort(String),
    #[error("signal too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
