use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),

    #[error("utterance-too-short: {samples} samples, need at least {needed}")]
    UtteranceTooShort { samples: usize, needed: usize },

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz)")]
    SampleRate { found: u32, expected: u32 },

    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no provider registered: {0}")]
    Provider(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("corrupt-checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt tensor file: {0}")]
    CorruptTensorFile(String),

    #[error("manifest {path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
