//! Log-mel front end.
//!
//! Frames are centred at `t * hop` with reflection padding, giving
//! `floor(len / hop)` frames so that 12.8 s of audio yields exactly 256
//! frames on the 0.05 s label grid. All arithmetic is `f64`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result, HOP, SAMPLE_RATE};

/// Mono PCM audio at 44.1 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 2048,
            hop: HOP,
            n_mels: 128,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::MelConfig(m.to_string()));
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(self.sample_rate));
        }
        if self.n_fft != 2048 {
            return bad("n_fft must be 2048");
        }
        if self.hop != HOP {
            return bad("hop must be 2205 samples (0.05 s)");
        }
        if self.n_mels != 128 {
            return bad("n_mels must be 128");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be a positive finite number");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_duration(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Complex STFT, stored frame-major: `data[t * n_bins + k]`.
#[derive(Debug, Clone)]
pub struct Stft {
    pub n_bins: usize,
    pub n_frames: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Log-power mel spectrogram, stored mel-major: `values[m * n_frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub frame_duration: f64,
}

impl Spectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    /// Keeps only the first `n_frames` frames.
    pub fn truncated(&self, n_frames: usize) -> Spectrogram {
        let n = n_frames.min(self.n_frames);
        let mut values = Vec::with_capacity(self.n_mels * n);
        for m in 0..self.n_mels {
            values.extend_from_slice(&self.values[m * self.n_frames..m * self.n_frames + n]);
        }
        Spectrogram {
            n_mels: self.n_mels,
            n_frames: n,
            values,
            frame_duration: self.frame_duration,
        }
    }
}

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Maps a possibly out-of-range index into `0..len` by mirror reflection
/// about the first and last sample (edge samples are not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as isize {
        r = period - r;
    }
    r as usize
}

pub fn stft(audio: &AudioBuffer, cfg: &MelConfig) -> Result<Stft> {
    cfg.validate()?;
    if audio.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRate(audio.sample_rate()));
    }
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let x = audio.samples();
    let n_frames = x.len() / cfg.hop;
    let n_bins = cfg.n_bins();
    let half = (cfg.n_fft / 2) as isize;
    let window = hann(cfg.n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);

    let mut data = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        let start = (t * cfg.hop) as isize - half;
        for (j, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            let idx = start + j as isize;
            let s = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                x[reflect_index(idx, x.len())]
            };
            *b = Complex64::new(s as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..n_bins]);
    }
    Ok(Stft {
        n_bins,
        n_frames,
        data,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the mel filters, plus the two outer edges:
/// `n_mels + 2` points evenly spaced in mel between 0 Hz and Nyquist.
pub fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let max_mel = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n - 1) as f64))
        .collect()
}

/// Triangular HTK-mel filterbank, unnormalized, row-major `[n_mels][n_bins]`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_bins();
    let edges = mel_edges(cfg);
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let rise = (f - lo) / (c - lo);
                    let fall = (hi - f) / (hi - c);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn log_mel(audio: &AudioBuffer, cfg: &MelConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if audio.len() < cfg.hop {
        if audio.is_empty() {
            return Err(Error::EmptyAudio);
        }
        return Err(Error::TooShort {
            len: audio.len(),
            hop: cfg.hop,
        });
    }
    let spec = stft(audio, cfg)?;
    let fb = mel_filterbank(cfg);
    // Sparse rows: only the bins under each triangle contribute.
    let support: Vec<(usize, usize)> = fb
        .iter()
        .map(|row| {
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            (first, last + 1)
        })
        .collect();

    let n_frames = spec.n_frames;
    let mut values = vec![0.0; cfg.n_mels * n_frames];
    let mut power = vec![0.0; spec.n_bins];
    for t in 0..n_frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        for (m, row) in fb.iter().enumerate() {
            let (a, b) = support[m];
            let e: f64 = row[a..b].iter().zip(&power[a..b]).map(|(w, p)| w * p).sum();
            values[m * n_frames + t] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(Spectrogram {
        n_mels: cfg.n_mels,
        n_frames,
        values,
        frame_duration: cfg.frame_duration(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, amp: f64) -> AudioBuffer {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn rejects_bad_audio() {
        assert!(matches!(
            AudioBuffer::new(vec![0.0; 10], 22050),
            Err(Error::SampleRate(22050))
        ));
        assert!(matches!(
            AudioBuffer::new(vec![0.0, f32::NAN], SAMPLE_RATE),
            Err(Error::NonFiniteSample(1))
        ));
        let empty = AudioBuffer::new(vec![], SAMPLE_RATE).unwrap();
        assert!(matches!(
            stft(&empty, &MelConfig::default()),
            Err(Error::EmptyAudio)
        ));
    }

    #[test]
    fn config_invariants() {
        let cfg = MelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_duration(), 0.05);
        let bad = MelConfig {
            hop: 2048,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_signal_stft() {
        let audio = AudioBuffer::new(vec![0.0; 44100], SAMPLE_RATE).unwrap();
        let s = stft(&audio, &MelConfig::default()).unwrap();
        assert_eq!(s.n_frames, 20);
        assert_eq!(s.n_bins, 1025);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let audio = sine(1000.0, 1.0, 1.0);
        let s = stft(&audio, &MelConfig::default()).unwrap();
        let expected = (1000.0f64 * 2048.0 / 44100.0).round() as usize;
        assert_eq!(expected, 46);
        for t in 1..s.n_frames - 1 {
            let frame = s.frame(t);
            let peak = (0..s.n_bins)
                .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
                .unwrap();
            assert_eq!(peak, expected, "frame {t}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        // Time-domain energy of the windowed frame vs. one-sided spectrum.
        let audio = sine(440.0, 0.5, 0.7);
        let cfg = MelConfig::default();
        let s = stft(&audio, &cfg).unwrap();
        let w = hann(cfg.n_fft);
        let x = audio.samples();
        for t in 1..s.n_frames - 1 {
            let start = t * cfg.hop - cfg.n_fft / 2;
            let time_energy: f64 = (0..cfg.n_fft)
                .map(|j| (x[start + j] as f64 * w[j]).powi(2))
                .sum();
            let f = s.frame(t);
            let n = cfg.n_fft;
            // Interior bins appear twice in the full spectrum.
            let spec_energy: f64 = (0..s.n_bins)
                .map(|k| {
                    let m = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                    m * f[k].norm_sqr()
                })
                .sum::<f64>()
                / n as f64;
            assert!(
                (time_energy - spec_energy).abs() <= 1e-9 * time_energy.max(1.0),
                "{time_energy} vs {spec_energy}"
            );
        }
    }

    #[test]
    fn reflection_padding_mirrors_edges() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(-6, 5), 2);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn filterbank_shape_and_triangles() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.len(), 128);
        assert!(fb.iter().all(|r| r.len() == 1025));
        for (m, row) in fb.iter().enumerate() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0), "row {m} has no support");
            // Unimodal: non-decreasing up to the peak, non-increasing after.
            let peak = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn filter_centres_spread_with_frequency() {
        let cfg = MelConfig::default();
        let edges = mel_edges(&cfg);
        assert_eq!(edges.len(), 130);
        assert!(edges[0].abs() < 1e-9);
        assert!((edges[129] - 22050.0).abs() < 1e-6);
        // Oracle: centre m is the inverse HTK mel of m * step.
        let step = hz_to_mel(22050.0) / 129.0;
        for (m, &c) in edges.iter().enumerate() {
            let oracle = 700.0 * (10f64.powf(m as f64 * step / 2595.0) - 1.0);
            assert!((c - oracle).abs() < 1e-6);
        }
        let gaps: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g > 0.0));
        assert!(gaps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn log_mel_frame_count_and_duration() {
        let audio = AudioBuffer::new(vec![0.0; 564_480], SAMPLE_RATE).unwrap();
        let spec = log_mel(&audio, &MelConfig::default()).unwrap();
        assert_eq!(spec.n_frames, 256);
        assert_eq!(spec.n_mels, 128);
        assert_eq!(spec.frame_duration, 2205.0 / 44100.0);
        assert_eq!(spec.frame_duration, 0.05);
        let floor = 1e-10f64.ln();
        assert!(spec.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn log_mel_too_short() {
        let audio = AudioBuffer::new(vec![0.1; 2204], SAMPLE_RATE).unwrap();
        assert!(matches!(
            log_mel(&audio, &MelConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn log_mel_deterministic_and_monotone_in_gain() {
        let cfg = MelConfig::default();
        let a = sine(330.0, 0.4, 0.3);
        let s1 = log_mel(&a, &cfg).unwrap();
        let s2 = log_mel(&a, &cfg).unwrap();
        assert_eq!(s1.values, s2.values);
        let louder = AudioBuffer::new(
            a.samples().iter().map(|x| x * 2.0).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let s3 = log_mel(&louder, &cfg).unwrap();
        assert!(s1.values.iter().zip(&s3.values).all(|(a, b)| b >= a));
        assert!(s1.values.iter().all(|&v| v >= cfg.log_floor.ln() && v.is_finite()));
    }
}
