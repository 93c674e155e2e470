//! # guzheng-ipt
//!
//! Frame-level detection of Guzheng playing techniques (IPTs) from audio.
//!
//! The pipeline has four stages:
//!
//! ```text
//! WAV -> log-mel (128 x T, 0.05 s frames) -> { FCN IPT detector  -> [8 x T] probabilities
//!                                            { onset detector    -> [T] onset probabilities
//!     -> threshold onsets -> per-segment voting -> note events -> frame / note metrics
//! ```
//!
//! - [`dsp`]: STFT, HTK mel filterbank and the log-mel front end.
//! - [`data`]: technique classes, the synthetic clip generator, sequence
//!   concatenation with cross-fade and frame-label quantization.
//! - [`nn`]: a small tensor/layer/backprop substrate with Adam and
//!   finite-difference gradient checking.
//! - [`models`]: the two detectors, their losses and the training loop.
//! - [`fusion`]: onset thresholding and segment voting.
//! - [`metrics`]: frame accuracy and note-level P/R/F1 with onset tolerance.
//! - [`app`]: the command implementations behind the `gzipt` binary.

pub mod app;
pub mod data;
pub mod dsp;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod viz;
pub mod wav;

pub use error::{Error, Result};

/// Sample rate of every audio buffer in the system.
pub const SAMPLE_RATE: u32 = 44_100;

/// Hop between analysis frames, in samples (0.05 s at 44.1 kHz).
pub const HOP: usize = 2205;

/// Duration of one analysis/label frame in seconds.
pub const FRAME_SECONDS: f64 = HOP as f64 / SAMPLE_RATE as f64;

/// Number of playing-technique classes.
pub const N_IPT: usize = 8;

/// Frame index containing time `seconds` on the 0.05 s grid.
///
/// Values within 1e-9 frames below a boundary snap up to it, so times that
/// were computed from whole hops (`k * 2205 / 44100`) land on frame `k`.
pub fn frame_of(seconds: f64) -> usize {
    let pos = seconds / FRAME_SECONDS;
    let snapped = pos.round();
    if (pos - snapped).abs() < 1e-9 {
        snapped.max(0.0) as usize
    } else {
        pos.floor().max(0.0) as usize
    }
}
