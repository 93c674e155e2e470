use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Clip, NoteEvent, TechniqueClass};
use crate::dsp::AudioBuffer;
use crate::{frame_of, Error, Result, FRAME_SECONDS, HOP, SAMPLE_RATE};

const SR: f64 = SAMPLE_RATE as f64;

/// A concatenation of clips together with its note events and frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub audio: AudioBuffer,
    pub events: Vec<NoteEvent>,
    pub onset_labels: Vec<u8>,
    pub ipt_labels: Vec<u8>,
    /// Ordered ids of the clips that make up the sequence.
    pub clip_ids: Vec<u32>,
}

impl SequenceExample {
    pub fn n_frames(&self) -> usize {
        self.ipt_labels.len()
    }

    /// Cuts audio, events and labels to the first `n_frames` frames.
    pub fn truncate_frames(&mut self, n_frames: usize) -> Result<()> {
        let n_samples = n_frames * HOP;
        if self.audio.len() < n_samples {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} samples to {n_samples}",
                self.audio.len()
            )));
        }
        let limit = n_samples as f64 / SR;
        let mut samples = std::mem::replace(&mut self.audio, AudioBuffer::new(vec![], SAMPLE_RATE)?)
            .into_samples();
        samples.truncate(n_samples);
        self.audio = AudioBuffer::new(samples, SAMPLE_RATE)?;
        self.events.retain(|e| frame_of(e.onset) < n_frames);
        if let Some(last) = self.events.last_mut() {
            last.offset = last.offset.min(limit);
        }
        let (onsets, ipt) = quantize_labels(&self.events, n_frames)?;
        self.onset_labels = onsets;
        self.ipt_labels = ipt;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConcatConfig {
    /// Overlap between adjacent clips, in seconds.
    pub crossfade: f64,
    /// Sequences grow until they are strictly longer than this, in seconds.
    pub min_len: f64,
}

impl Default for ConcatConfig {
    fn default() -> Self {
        Self {
            crossfade: 0.05,
            min_len: 12.8,
        }
    }
}

impl ConcatConfig {
    fn crossfade_samples(&self) -> usize {
        (self.crossfade * SR).round() as usize
    }

    fn min_len_samples(&self) -> usize {
        (self.min_len * SR).round() as usize
    }

    /// Frames kept by `SplitMode::Train`.
    pub fn train_frames(&self) -> usize {
        self.min_len_samples() / HOP
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Cut to exactly `min_len` (256 frames at the default 12.8 s).
    Train,
    /// Keep the full variable-length sequence.
    Test,
}

/// Length in samples of `lens` concatenated with `xf`-sample overlaps.
fn joined_len(lens: impl IntoIterator<Item = usize>, xf: usize) -> usize {
    let mut total = 0;
    let mut k = 0usize;
    for n in lens {
        total += n;
        k += 1;
    }
    total - k.saturating_sub(1) * xf
}

/// Concatenates clips with linear cross-fades.
///
/// Clip `k` starts `sum_{i<k} (len_i - crossfade)` into the sequence; its
/// event runs until the next clip starts (or the end of the audio).
pub fn concat_clips(clips: &[&Clip], cfg: &ConcatConfig) -> Result<SequenceExample> {
    let xf = cfg.crossfade_samples();
    if clips.is_empty() {
        return Err(Error::InsufficientDuration {
            total: 0.0,
            required: cfg.min_len,
        });
    }
    if let Some(c) = clips.iter().find(|c| c.audio.len() < 2 * xf) {
        return Err(Error::InvalidArgument(format!(
            "clip {} is shorter than two cross-fades",
            c.id
        )));
    }
    let total = joined_len(clips.iter().map(|c| c.audio.len()), xf);
    if total <= cfg.min_len_samples() {
        return Err(Error::InsufficientDuration {
            total: total as f64 / SR,
            required: cfg.min_len,
        });
    }

    let mut out: Vec<f32> = Vec::with_capacity(total);
    let mut starts = Vec::with_capacity(clips.len());
    for (k, clip) in clips.iter().enumerate() {
        let x = clip.audio.samples();
        if k == 0 {
            starts.push(0);
            out.extend_from_slice(x);
            continue;
        }
        let start = out.len() - xf;
        starts.push(start);
        for (j, &s) in x[..xf].iter().enumerate() {
            let w = (j as f64 + 0.5) / xf as f64;
            let o = &mut out[start + j];
            *o = ((1.0 - w) * *o as f64 + w * s as f64) as f32;
        }
        out.extend_from_slice(&x[xf..]);
    }
    debug_assert_eq!(out.len(), total);

    let events = clips
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let end = starts.get(k + 1).copied().unwrap_or(total);
            NoteEvent::new(starts[k] as f64 / SR, end as f64 / SR, c.technique)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_frames = total / HOP;
    let (onset_labels, ipt_labels) = quantize_labels(&events, n_frames)?;
    Ok(SequenceExample {
        audio: AudioBuffer::new(out, SAMPLE_RATE)?,
        events,
        onset_labels,
        ipt_labels,
        clip_ids: clips.iter().map(|c| c.id).collect(),
    })
}

/// Converts events to per-frame labels.
///
/// The onset frame of each event is `floor(onset / 0.05)`. Every frame from
/// an event's onset frame up to the next event's onset frame carries that
/// event's class; frames before the first onset take the first event's
/// class.
pub fn quantize_labels(events: &[NoteEvent], n_frames: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("no events to quantize".into()));
    }
    for (i, w) in events.windows(2).enumerate() {
        if w[1].onset < w[0].offset - 1e-12 || w[1].onset <= w[0].onset {
            return Err(Error::OverlappingEvents(i + 1));
        }
    }
    let frames: Vec<usize> = events.iter().map(|e| frame_of(e.onset)).collect();
    for (i, &f) in frames.iter().enumerate() {
        if f >= n_frames {
            return Err(Error::EventOutOfRange { index: i, n_frames });
        }
        if i > 0 && frames[i - 1] == f {
            return Err(Error::CollidingOnsets(i - 1, i));
        }
    }
    let mut onsets = vec![0u8; n_frames];
    let mut ipt = vec![0u8; n_frames];
    for (i, e) in events.iter().enumerate() {
        onsets[frames[i]] = 1;
        let from = if i == 0 { 0 } else { frames[i] };
        let to = frames.get(i + 1).copied().unwrap_or(n_frames);
        ipt[from..to].fill(e.technique.id() as u8);
    }
    Ok((onsets, ipt))
}

/// Rebuilds note events from frame labels: one event per onset frame,
/// lasting until the next onset frame.
pub fn labels_to_events(onset_labels: &[u8], ipt_labels: &[u8]) -> Result<Vec<NoteEvent>> {
    if onset_labels.len() != ipt_labels.len() {
        return Err(Error::Shape(format!(
            "onset labels ({}) and IPT labels ({}) differ in length",
            onset_labels.len(),
            ipt_labels.len()
        )));
    }
    let starts: Vec<usize> = (0..onset_labels.len())
        .filter(|&t| onset_labels[t] == 1)
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(onset_labels.len());
            NoteEvent::new(
                s as f64 * FRAME_SECONDS,
                end as f64 * FRAME_SECONDS,
                TechniqueClass::from_id(ipt_labels[s] as usize)?,
            )
        })
        .collect()
}

/// Counts (up to `cap`) the distinct clip orderings that the random
/// concatenation process can produce: sequences of distinct clips whose
/// joined length first exceeds `min_len` at the last clip.
fn count_orderings(lens: &[usize], xf: usize, min_len: usize, cap: usize) -> Vec<Vec<usize>> {
    fn dfs(
        lens: &[usize],
        xf: usize,
        min_len: usize,
        cap: usize,
        used: &mut Vec<bool>,
        path: &mut Vec<usize>,
        total: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        for i in 0..lens.len() {
            if out.len() >= cap {
                return;
            }
            if used[i] {
                continue;
            }
            let next = if path.is_empty() {
                lens[i]
            } else {
                total + lens[i] - xf
            };
            path.push(i);
            if next > min_len {
                out.push(path.clone());
            } else {
                used[i] = true;
                dfs(lens, xf, min_len, cap, used, path, next, out);
                used[i] = false;
            }
            path.pop();
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; lens.len()];
    dfs(lens, xf, min_len, cap, &mut used, &mut Vec::new(), 0, &mut out);
    out
}

/// Chooses `count` distinct clip orderings (as indices into `pool`).
///
/// Each ordering draws clips uniformly without replacement until the joined
/// length exceeds `cfg.min_len`. Orderings are unique by their tuple of clip
/// ids.
pub fn plan_split(
    pool: &[Clip],
    count: usize,
    cfg: &ConcatConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("clip pool is empty".into()));
    }
    let mut ids = HashSet::new();
    if let Some(c) = pool.iter().find(|c| !ids.insert(c.id)) {
        return Err(Error::InvalidArgument(format!("duplicate clip id {}", c.id)));
    }
    let xf = cfg.crossfade_samples();
    let min_len = cfg.min_len_samples();
    if let Some(c) = pool.iter().find(|c| c.audio.len() < 2 * xf) {
        return Err(Error::InvalidArgument(format!(
            "clip {} is shorter than two cross-fades",
            c.id
        )));
    }
    let lens: Vec<usize> = pool.iter().map(|c| c.audio.len()).collect();
    let whole = joined_len(lens.iter().copied(), xf);
    if whole <= min_len {
        return Err(Error::InsufficientDuration {
            total: whole as f64 / SR,
            required: cfg.min_len,
        });
    }

    let cap = count.saturating_mul(4).max(64);
    let enumerated = count_orderings(&lens, xf, min_len, cap);
    if enumerated.len() < count {
        return Err(Error::NotEnoughOrderings {
            requested: count,
            available: enumerated.len(),
        });
    }
    if enumerated.len() < cap {
        // Every ordering is known; pick `count` of them at random.
        let mut all = enumerated;
        all.shuffle(rng);
        all.truncate(count);
        return Ok(all);
    }

    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut plans = Vec::with_capacity(count);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    while plans.len() < count {
        order.shuffle(rng);
        let mut total = 0;
        let mut k = 0;
        while total <= min_len {
            total = if k == 0 {
                lens[order[0]]
            } else {
                total + lens[order[k]] - xf
            };
            k += 1;
        }
        let plan = order[..k].to_vec();
        if seen.insert(plan.iter().map(|&i| pool[i].id).collect()) {
            plans.push(plan);
        }
    }
    Ok(plans)
}

/// Builds the sequence for one ordering from `plan_split`.
pub fn materialize(
    pool: &[Clip],
    plan: &[usize],
    mode: SplitMode,
    cfg: &ConcatConfig,
) -> Result<SequenceExample> {
    let clips: Vec<&Clip> = plan
        .iter()
        .map(|&i| {
            pool.get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("clip index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    let mut seq = concat_clips(&clips, cfg)?;
    if mode == SplitMode::Train {
        seq.truncate_frames(cfg.train_frames())?;
    }
    Ok(seq)
}

/// Generates `count` unique sequences from `pool`.
pub fn generate_split(
    pool: &[Clip],
    count: usize,
    mode: SplitMode,
    cfg: &ConcatConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SequenceExample>> {
    plan_split(pool, count, cfg, rng)?
        .iter()
        .map(|plan| materialize(pool, plan, mode, cfg))
        .collect()
}
