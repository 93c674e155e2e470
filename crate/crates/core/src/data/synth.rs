//! Synthetic single-technique clips.
//!
//! Every clip is a sum of plucked-string "strokes": a harmonic tone with a
//! short noise burst at the attack, per-harmonic exponential decay and a
//! time-varying pitch. Each technique is a particular arrangement of strokes
//! and pitch trajectories.

use std::f64::consts::PI;

use rand::Rng;

use super::{Clip, TechniqueClass};
use crate::dsp::AudioBuffer;
use crate::{Error, Result, SAMPLE_RATE};

const SR: f64 = SAMPLE_RATE as f64;
const PENTATONIC: [f64; 5] = [0.0, 2.0, 4.0, 7.0, 9.0];

type PitchCurve = Box<dyn Fn(f64) -> f64>;

struct Stroke {
    start: f64,
    gain: f64,
    /// Fundamental in Hz before the pitch curve is applied.
    f0: f64,
    n_harm: usize,
    tilt: f64,
    tau: f64,
    noise: f64,
    /// Semitone offset as a function of time since `start`.
    pitch: PitchCurve,
    /// Amplitude modulation as a function of time since `start`.
    am: Option<PitchCurve>,
    /// Time (since `start`) at which the string is damped.
    damp_at: Option<f64>,
}

impl Stroke {
    fn plain(start: f64, f0: f64, tau: f64) -> Self {
        Stroke {
            start,
            gain: 1.0,
            f0,
            n_harm: 10,
            tilt: 0.7,
            tau,
            noise: 0.3,
            pitch: Box::new(|_| 0.0),
            am: None,
            damp_at: None,
        }
    }
}

const ATTACK: f64 = 0.002;
const DAMP_FADE: f64 = 0.005;

fn render(strokes: &[Stroke], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for s in strokes {
        let first = (s.start * SR).round() as usize;
        if first >= n {
            continue;
        }
        // Render until the slowest partial has decayed by ~80 dB.
        let mut len = ((s.tau * 9.5) * SR) as usize;
        if let Some(d) = s.damp_at {
            len = len.min(((d + DAMP_FADE) * SR) as usize);
        }
        let last = (first + len).min(n);

        let max_pitch = (0..=20)
            .map(|i| (s.pitch)(i as f64 / 20.0 * len as f64 / SR))
            .fold(f64::MIN, f64::max);
        let top = s.f0 * 2f64.powf(max_pitch / 12.0);
        let n_harm = (1..=s.n_harm).take_while(|&k| k as f64 * top < 18_000.0).count().max(1);
        let mut amp: Vec<f64> = (0..n_harm)
            .map(|k| s.tilt.powi(k as i32) / (k + 1) as f64)
            .collect();
        let decay: Vec<f64> = (0..n_harm)
            .map(|k| (-(1.0 + 0.4 * k as f64) / (s.tau * SR)).exp())
            .collect();

        let mut phase = 0.0f64;
        for (j, o) in out[first..last].iter_mut().enumerate() {
            let t = j as f64 / SR;
            let f = s.f0 * 2f64.powf((s.pitch)(t) / 12.0);
            phase += 2.0 * PI * f / SR;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            // sin(k x) by the Chebyshev recurrence.
            let (sin1, cos1) = phase.sin_cos();
            let (mut prev, mut cur) = (0.0, sin1);
            let mut tone = 0.0;
            for (a, d) in amp.iter_mut().zip(&decay) {
                tone += *a * cur;
                *a *= d;
                let next = 2.0 * cos1 * cur - prev;
                prev = cur;
                cur = next;
            }
            let mut env = (t / ATTACK).min(1.0);
            if let Some(d) = s.damp_at {
                if t > d {
                    env *= (1.0 - (t - d) / DAMP_FADE).max(0.0);
                }
            }
            if let Some(am) = &s.am {
                env *= am(t);
            }
            let burst = if t < 0.04 {
                s.noise * (-t / 0.008).exp() * (rng.random::<f64>() * 2.0 - 1.0)
            } else {
                0.0
            };
            *o += s.gain * (env * tone + burst);
        }
    }
    out
}

/// Raised-cosine ramp from 0 at `x <= 0` to 1 at `x >= 1`.
fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * x).cos()
}

fn strokes_for(
    technique: TechniqueClass,
    f0: f64,
    duration: f64,
    rng: &mut impl Rng,
) -> Vec<Stroke> {
    let d = duration;
    match technique {
        TechniqueClass::Plucks => {
            let mut s = Stroke::plain(0.0, f0, rng.random_range(0.35..0.7));
            s.tilt = rng.random_range(0.6..0.8);
            vec![s]
        }
        TechniqueClass::Vibrato => {
            let rate = rng.random_range(4.5..6.0);
            let cents = rng.random_range(25.0..35.0);
            let onset = rng.random_range(0.1..0.2);
            let mut s = Stroke::plain(0.0, f0, rng.random_range(1.2..2.0));
            let depth = move |t: f64| smoothstep((t - onset) / 0.1);
            s.pitch = Box::new(move |t| depth(t) * cents / 100.0 * (2.0 * PI * rate * t).sin());
            s.am = Some(Box::new(move |t| {
                1.0 + 0.15 * depth(t) * (2.0 * PI * rate * t).sin()
            }));
            vec![s]
        }
        TechniqueClass::UpPortamento | TechniqueClass::DownPortamento => {
            let interval = rng.random_range(1.0..4.0);
            let sign = if technique == TechniqueClass::UpPortamento {
                1.0
            } else {
                -1.0
            };
            let start = (rng.random_range(0.15..0.3) * d).max(0.15);
            let len = rng.random_range(0.15..0.35) * d;
            let mut s = Stroke::plain(0.0, f0, rng.random_range(0.9..1.6));
            s.pitch = Box::new(move |t| sign * interval * smoothstep((t - start) / len));
            vec![s]
        }
        TechniqueClass::ReturnPortamento => {
            let interval = rng.random_range(1.0..4.0);
            let up_start = (rng.random_range(0.1..0.2) * d).max(0.1);
            let up_len = rng.random_range(0.12..0.25) * d;
            let hold = rng.random_range(0.05..0.15) * d;
            let down_len = rng.random_range(0.12..0.25) * d;
            let down_start = up_start + up_len + hold;
            let mut s = Stroke::plain(0.0, f0, rng.random_range(0.9..1.6));
            s.pitch = Box::new(move |t| {
                interval
                    * (smoothstep((t - up_start) / up_len)
                        - smoothstep((t - down_start) / down_len))
            });
            vec![s]
        }
        TechniqueClass::Glissando => {
            let n = rng.random_range(5..=9usize);
            let spacing = rng.random_range(0.05..0.09f64).min(0.8 * d / n as f64);
            let descending = rng.random_bool(0.5);
            (0..n)
                .map(|j| {
                    let step = if descending { n - 1 - j } else { j };
                    let semis = PENTATONIC[step % 5] + 12.0 * (step / 5) as f64;
                    let last = j == n - 1;
                    let tau = if last {
                        rng.random_range(0.5..1.0)
                    } else {
                        0.25
                    };
                    let mut s = Stroke::plain(j as f64 * spacing, f0 * 2f64.powf(semis / 12.0), tau);
                    s.n_harm = 8;
                    s.gain = rng.random_range(0.7..1.0);
                    s
                })
                .collect()
        }
        TechniqueClass::Tremolo => {
            let rate = rng.random_range(10.0..14.0);
            let mut times = vec![0.0];
            loop {
                let next = times.last().unwrap() + rng.random_range(0.9..1.1) / rate;
                if next >= d {
                    break;
                }
                times.push(next);
            }
            let mut strokes = Vec::with_capacity(times.len());
            for (i, &t) in times.iter().enumerate() {
                let mut s = Stroke::plain(t, f0, 0.25);
                s.n_harm = 8;
                s.noise = 0.2;
                s.gain = rng.random_range(0.6..1.0);
                s.damp_at = times.get(i + 1).map(|&n| n - t);
                strokes.push(s);
            }
            strokes
        }
        TechniqueClass::Harmonic => {
            let mut s = Stroke::plain(0.0, 2.0 * f0, rng.random_range(0.25..0.45));
            s.n_harm = 2;
            s.tilt = 0.2;
            s.noise = 0.1;
            vec![s]
        }
    }
}

/// Synthesizes one clip of `technique` with base pitch `f0` (Hz).
///
/// `f0` must lie in [60, 1200] Hz and `duration` in [0.5, 3.0] s.
pub fn synth_clip(
    id: u32,
    technique: TechniqueClass,
    f0: f64,
    duration: f64,
    rng: &mut impl Rng,
) -> Result<Clip> {
    if !(60.0..=1200.0).contains(&f0) {
        return Err(Error::InvalidArgument(format!(
            "f0 {f0} Hz outside [60, 1200] Hz"
        )));
    }
    if !(0.5..=3.0).contains(&duration) {
        return Err(Error::InvalidArgument(format!(
            "clip duration {duration} s outside [0.5, 3.0] s"
        )));
    }
    let n = (duration * SR).round() as usize;
    let strokes = strokes_for(technique, f0, duration, rng);
    let raw = render(&strokes, n, rng);
    let peak = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let target = rng.random_range(0.3..0.7);
    let scale = if peak > 0.0 { target / peak } else { 0.0 };
    let samples = raw.iter().map(|x| (x * scale) as f32).collect();
    Clip::new(id, AudioBuffer::new(samples, SAMPLE_RATE)?, technique)
}

/// Parameters for drawing a pool of synthetic clips.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub clips_per_class: usize,
    pub min_f0: f64,
    pub max_f0: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 24,
            min_f0: 98.0,
            max_f0: 880.0,
            min_duration: 0.6,
            max_duration: 3.0,
        }
    }
}

/// Draws `clips_per_class` clips of every technique, log-uniform in f0 and
/// uniform in duration. Ids start at `first_id`.
pub fn synth_pool(cfg: &PoolConfig, first_id: u32, rng: &mut impl Rng) -> Result<Vec<Clip>> {
    let mut clips = Vec::with_capacity(cfg.clips_per_class * 8);
    let (lo, hi) = (cfg.min_f0.ln(), cfg.max_f0.ln());
    for _ in 0..cfg.clips_per_class {
        for technique in TechniqueClass::ALL {
            let f0 = rng.random_range(lo..=hi).exp();
            let dur = rng.random_range(cfg.min_duration..=cfg.max_duration);
            let id = first_id + clips.len() as u32;
            clips.push(synth_clip(id, technique, f0, dur, rng)?);
        }
    }
    Ok(clips)
}
