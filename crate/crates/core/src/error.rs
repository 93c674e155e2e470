use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("audio buffer is empty")]
    EmptyAudio,

    #[error("unsupported sample rate {0} Hz (expected 44100 Hz)")]
    SampleRate(u32),

    #[error("audio contains a non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("invalid mel configuration: {0}")]
    MelConfig(String),

    #[error("audio is shorter than one hop ({len} < {hop} samples)")]
    TooShort { len: usize, hop: usize },

    #[error("unsupported WAV format: {0}")]
    WavFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient total duration: {total:.3} s <= required {required:.3} s")]
    InsufficientDuration { total: f64, required: f64 },

    #[error("requested {requested} sequences but only {available} distinct clip orderings exist")]
    NotEnoughOrderings { requested: usize, available: usize },

    #[error("events overlap or are unsorted at index {0}")]
    OverlappingEvents(usize),

    #[error("events {0} and {1} quantize to the same onset frame")]
    CollidingOnsets(usize, usize),

    #[error("event {index} lies outside the {n_frames}-frame label range")]
    EventOutOfRange { index: usize, n_frames: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {index} ({kind}): {reason}")]
    Layer {
        index: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("invalid class id {0}")]
    InvalidClass(usize),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("empty corpus")]
    EmptyCorpus,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of the numerics (divergence, non-finite values)
    /// rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteGradient(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
