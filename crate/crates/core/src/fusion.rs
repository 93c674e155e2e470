//! Onset thresholding and segment voting over IPT probabilities.

use serde::{Deserialize, Serialize};

use crate::data::{NoteEvent, TechniqueClass};
use crate::{Error, Result};

/// A run of frames `start..=end` assigned one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedResult {
    /// `[n][t]` with exactly one 1 per column.
    pub one_hot: Vec<Vec<u8>>,
    /// Ordered, covering `0..t` without gaps.
    pub segments: Vec<Segment>,
}

impl FusedResult {
    fn from_segments(n: usize, t: usize, segments: Vec<Segment>) -> Self {
        let mut one_hot = vec![vec![0u8; t]; n];
        for s in &segments {
            one_hot[s.class][s.start..=s.end].iter_mut().for_each(|v| *v = 1);
        }
        Self { one_hot, segments }
    }

    pub fn n_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }

    /// Class of every frame.
    pub fn frame_classes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_frames());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.class, s.end + 1 - s.start));
        }
        out
    }
}

/// `1` where `probs[i] >= theta`.
pub fn threshold_onsets(probs: &[f64], theta: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= theta)).collect()
}

/// Drops onsets closer than `min_gap` frames to the previous kept onset.
pub fn suppress_onsets(onsets: &[u8], min_gap: usize) -> Vec<u8> {
    let mut out = vec![0u8; onsets.len()];
    let mut last: Option<usize> = None;
    for (i, &o) in onsets.iter().enumerate() {
        if o != 0 && last.is_none_or(|l| i - l >= min_gap) {
            out[i] = 1;
            last = Some(i);
        }
    }
    out
}

/// First index of the largest value; ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(d_ipt: &[Vec<f64>], t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::Shape("fusion needs at least one frame".into()));
    }
    if d_ipt.is_empty() || d_ipt.iter().any(|r| r.len() != t) {
        return Err(Error::Shape(format!(
            "IPT output rows must have {t} frames to match the onset output"
        )));
    }
    Ok(())
}

/// Sums IPT probabilities between consecutive onsets and assigns each
/// segment its highest-scoring class. The first segment starts at frame 0
/// whether or not frame 0 is an onset.
pub fn decision_fusion(d_onset: &[u8], d_ipt: &[Vec<f64>]) -> Result<FusedResult> {
    let t = d_onset.len();
    check_shapes(d_ipt, t)?;
    let n = d_ipt.len();
    let mut v = vec![0.0; n];
    let mut b = 0;
    let mut segments = Vec::new();
    for i in 0..t {
        for (acc, row) in v.iter_mut().zip(d_ipt) {
            *acc += row[i];
        }
        if i + 1 == t || d_onset[i + 1] != 0 {
            segments.push(Segment {
                start: b,
                end: i,
                class: argmax(&v),
            });
            v.iter_mut().for_each(|x| *x = 0.0);
            b = i + 1;
        }
    }
    Ok(FusedResult::from_segments(n, t, segments))
}

/// Per-frame argmax with runs of equal class merged into segments.
pub fn argmax_segments(d_ipt: &[Vec<f64>]) -> Result<FusedResult> {
    let t = d_ipt.first().map_or(0, Vec::len);
    check_shapes(d_ipt, t)?;
    let mut col = vec![0.0; d_ipt.len()];
    let mut segments: Vec<Segment> = Vec::new();
    for i in 0..t {
        for (c, row) in col.iter_mut().zip(d_ipt) {
            *c = row[i];
        }
        let class = argmax(&col);
        match segments.last_mut() {
            Some(s) if s.class == class => s.end = i,
            _ => segments.push(Segment {
                start: i,
                end: i,
                class,
            }),
        }
    }
    Ok(FusedResult::from_segments(d_ipt.len(), t, segments))
}

/// One event per segment: `[start, end + 1) * frame_duration`.
pub fn segments_to_events(result: &FusedResult, frame_duration: f64) -> Result<Vec<NoteEvent>> {
    result
        .segments
        .iter()
        .map(|s| {
            NoteEvent::new(
                s.start as f64 * frame_duration,
                (s.end + 1) as f64 * frame_duration,
                TechniqueClass::from_id(s.class)?,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub threshold: f64,
    /// Minimum frames between kept onsets; 0 keeps every thresholded frame.
    pub min_gap: usize,
    /// Skip onset voting and use the per-frame argmax.
    pub disabled: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_gap: 0,
            disabled: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "onset threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Fused (or argmax) result for one piece.
    pub fn apply(&self, onset_probs: &[f64], d_ipt: &[Vec<f64>]) -> Result<FusedResult> {
        if self.disabled {
            if d_ipt.first().map(Vec::len) != Some(onset_probs.len()) {
                return Err(Error::Shape("IPT and onset outputs differ in length".into()));
            }
            return argmax_segments(d_ipt);
        }
        let mut onsets = threshold_onsets(onset_probs, self.threshold);
        if self.min_gap > 1 {
            onsets = suppress_onsets(&onsets, self.min_gap);
        }
        decision_fusion(&onsets, d_ipt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(threshold_onsets(&[0.2, 0.7, 0.5], 0.5), [0, 1, 1]);
        assert_eq!(threshold_onsets(&[0.0; 3], 0.5), [0, 0, 0]);
        assert_eq!(threshold_onsets(&[0.0, 0.3], 0.0), [1, 1]);
    }

    #[test]
    fn hand_traced_example() {
        let d_ipt = vec![vec![0.9, 0.2, 0.1, 0.4], vec![0.1, 0.8, 0.9, 0.6]];
        let r = decision_fusion(&[1, 0, 1, 0], &d_ipt).unwrap();
        assert_eq!(
            r.segments,
            [
                Segment { start: 0, end: 1, class: 0 },
                Segment { start: 2, end: 3, class: 1 }
            ]
        );
        assert_eq!(r.one_hot, [vec![1, 1, 0, 0], vec![0, 0, 1, 1]]);
    }

    #[test]
    fn degenerate_onset_patterns() {
        let d_ipt = vec![vec![0.6, 0.1, 0.6], vec![0.4, 0.9, 0.4]];
        let none = decision_fusion(&[0, 0, 0], &d_ipt).unwrap();
        assert_eq!(none.segments, [Segment { start: 0, end: 2, class: 1 }]);
        let all = decision_fusion(&[1, 1, 1], &d_ipt).unwrap();
        assert_eq!(all.frame_classes(), [0, 1, 0]);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let d_ipt = vec![vec![0.5], vec![0.5]];
        assert_eq!(decision_fusion(&[0], &d_ipt).unwrap().segments[0].class, 0);
        assert_eq!(argmax_segments(&d_ipt).unwrap().segments[0].class, 0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(decision_fusion(&[0, 1], &[vec![1.0]]).is_err());
        assert!(decision_fusion(&[], &[vec![]]).is_err());
    }

    #[test]
    fn events_from_segments() {
        let r = FusedResult::from_segments(
            8,
            7,
            vec![
                Segment { start: 0, end: 4, class: 2 },
                Segment { start: 5, end: 6, class: 7 },
            ],
        );
        let ev = segments_to_events(&r, 0.05).unwrap();
        assert_eq!(ev[0].onset, 0.0);
        assert!((ev[0].offset - 0.25).abs() < 1e-12);
        assert_eq!(ev[0].technique.id(), 2);
        assert!(ev[0].offset <= ev[1].onset + 1e-12);
    }

    #[test]
    fn argmax_runs_merge() {
        let d_ipt = vec![vec![0.9, 0.8, 0.1, 0.7], vec![0.1, 0.2, 0.9, 0.3]];
        let r = argmax_segments(&d_ipt).unwrap();
        assert_eq!(r.frame_classes(), [0, 0, 1, 0]);
        assert_eq!(r.segments.len(), 3);
    }

    #[test]
    fn suppression() {
        assert_eq!(suppress_onsets(&[1, 1, 0, 1, 1, 0, 0, 1], 3), [1, 0, 0, 1, 0, 0, 0, 1]);
        let cfg = FusionConfig {
            min_gap: 2,
            ..FusionConfig::default()
        };
        let d_ipt = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let r = cfg.apply(&[0.9, 0.9, 0.1], &d_ipt).unwrap();
        assert_eq!(r.segments.len(), 1);
    }
}
