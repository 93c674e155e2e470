//! RIFF WAV reading and writing.
//!
//! Reads 16-bit integer or 32-bit float PCM, downmixing multi-channel files
//! by averaging. Writes mono 32-bit float so that round trips are exact.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::AudioBuffer;
use crate::{Error, Result, SAMPLE_RATE};

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavFormat("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::WavFormat(format!(
                "{}: {bits}-bit {fmt:?} PCM (supported: 16-bit int, 32-bit float)",
                path.display()
            )))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().map(|&s| s as f64).sum::<f64>() as f32 / channels as f32)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in audio.samples() {
        w.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::WavFormat(format!("{}: {other}", path.display())),
    }
}
