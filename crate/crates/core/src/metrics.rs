//! Frame accuracy and note-level precision/recall/F1.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::NoteEvent;
use crate::fusion::{segments_to_events, FusionConfig};
use crate::models::DetectorOutput;
use crate::{Error, Result, FRAME_SECONDS};

/// Default onset tolerance in seconds.
pub const ONSET_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl NoteScore {
    pub fn from_counts(matches: usize, n_ref: usize, n_est: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matches, n_est);
        let recall = ratio(matches, n_ref);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

pub fn frame_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("no frames to score".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Whether `r` and `e` may be matched: same class and onsets within `tol`
/// after rounding the distance to 4 decimals.
pub fn admissible(r: &NoteEvent, e: &NoteEvent, tol: f64) -> bool {
    let d = ((r.onset - e.onset).abs() * 1e4).round() / 1e4;
    r.technique == e.technique && d <= tol
}

/// Maximum one-to-one matching between reference and estimated notes, as
/// `(ref index, est index)` pairs sorted by reference index.
pub fn match_notes(reference: &[NoteEvent], estimate: &[NoteEvent], tol: f64) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| {
            (0..estimate.len())
                .filter(|&j| admissible(r, &estimate[j], tol))
                .collect()
        })
        .collect();
    let (pair_ref, _) = hopcroft_karp(&adj, estimate.len());
    pair_ref
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect()
}

/// Maximum bipartite matching. `adj[u]` lists right vertices of left vertex
/// `u`. Returns the partner of every left and right vertex.
fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    const INF: usize = usize::MAX;
    let n_left = adj.len();
    let mut pair_u: Vec<Option<usize>> = vec![None; n_left];
    let mut pair_v: Vec<Option<usize>> = vec![None; n_right];
    let mut dist = vec![INF; n_left];

    loop {
        // Layer free left vertices, then alternate along matched edges.
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if pair_u[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match pair_v[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            break;
        }
        for u in 0..n_left {
            if pair_u[u].is_none() {
                augment(u, adj, &mut pair_u, &mut pair_v, &mut dist);
            }
        }
    }
    (pair_u, pair_v)
}

fn augment(
    u: usize,
    adj: &[Vec<usize>],
    pair_u: &mut [Option<usize>],
    pair_v: &mut [Option<usize>],
    dist: &mut [usize],
) -> bool {
    for &v in &adj[u] {
        let ok = match pair_v[v] {
            None => true,
            Some(w) => dist[w] == dist[u] + 1 && augment(w, adj, pair_u, pair_v, dist),
        };
        if ok {
            pair_u[u] = Some(v);
            pair_v[v] = Some(u);
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}

pub fn note_prf(reference: &[NoteEvent], estimate: &[NoteEvent], tol: f64) -> NoteScore {
    let m = match_notes(reference, estimate, tol).len();
    NoteScore::from_counts(m, reference.len(), estimate.len())
}

/// Ground truth and detector outputs for one piece.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub name: String,
    pub events: Vec<NoteEvent>,
    pub frame_labels: Vec<usize>,
    pub output: DetectorOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceScore {
    pub name: String,
    pub n_frames: usize,
    pub frame_accuracy: f64,
    pub note: NoteScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_piece: Vec<PieceScore>,
    pub mean_frame_accuracy: f64,
    pub mean_note: NoteScore,
}

impl EvalReport {
    /// Unweighted means over `per_piece`.
    pub fn from_pieces(per_piece: Vec<PieceScore>) -> Result<Self> {
        if per_piece.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = per_piece.len() as f64;
        let mean = |f: &dyn Fn(&PieceScore) -> f64| per_piece.iter().map(f).sum::<f64>() / n;
        let mean_frame_accuracy = mean(&|p| p.frame_accuracy);
        let mean_note = NoteScore {
            precision: mean(&|p| p.note.precision),
            recall: mean(&|p| p.note.recall),
            f1: mean(&|p| p.note.f1),
        };
        Ok(Self {
            per_piece,
            mean_frame_accuracy,
            mean_note,
        })
    }

    /// One-row summary: frame accuracy and note P/R/F1, in percent.
    pub fn summary_csv(&self, system: &str) -> String {
        let mut s = String::from("system,frame_accuracy,note_precision,note_recall,note_f1\n");
        let _ = writeln!(
            s,
            "{system},{:.2},{:.2},{:.2},{:.2}",
            100.0 * self.mean_frame_accuracy,
            100.0 * self.mean_note.precision,
            100.0 * self.mean_note.recall,
            100.0 * self.mean_note.f1
        );
        s
    }
}

/// Scores one piece after fusion (or argmax, if `fusion.disabled`).
pub fn score_piece(piece: &Piece, fusion: &FusionConfig, tol: f64) -> Result<PieceScore> {
    let fused = fusion.apply(&piece.output.onset_probs, &piece.output.ipt_probs)?;
    let events = segments_to_events(&fused, FRAME_SECONDS)?;
    Ok(PieceScore {
        name: piece.name.clone(),
        n_frames: piece.frame_labels.len(),
        frame_accuracy: frame_accuracy(&fused.frame_classes(), &piece.frame_labels)?,
        note: note_prf(&piece.events, &events, tol),
    })
}

pub fn evaluate_corpus(pieces: &[Piece], fusion: &FusionConfig, tol: f64) -> Result<EvalReport> {
    if pieces.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores = pieces
        .iter()
        .map(|p| score_piece(p, fusion, tol))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_pieces(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TechniqueClass as T;

    fn ev(on: f64, t: T) -> NoteEvent {
        NoteEvent::new(on, on + 0.5, t).unwrap()
    }

    #[test]
    fn frame_accuracy_examples() {
        assert_eq!(frame_accuracy(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(frame_accuracy(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(frame_accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert!(frame_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn tolerance_is_inclusive() {
        assert!(admissible(&ev(1.0, T::Tremolo), &ev(1.04, T::Tremolo), 0.05));
        assert!(admissible(&ev(1.0, T::Tremolo), &ev(1.05, T::Tremolo), 0.05));
        assert!(!admissible(&ev(1.0, T::Tremolo), &ev(1.06, T::Tremolo), 0.05));
        assert!(!admissible(&ev(1.0, T::Tremolo), &ev(1.0, T::Harmonic), 0.05));
    }

    #[test]
    fn prf_examples() {
        let r = [ev(0.0, T::Vibrato), ev(1.0, T::Plucks)];
        assert_eq!(note_prf(&r, &r, 0.05).f1, 1.0);
        let s = note_prf(&r, &r[1..], 0.05);
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        let z = note_prf(&r, &[], 0.05);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn maximum_matching_beats_greedy() {
        // Greedy pairing of r0 with its nearest estimate (e1) strands r1.
        let r = [ev(1.00, T::Plucks), ev(1.06, T::Plucks)];
        let e = [ev(0.96, T::Plucks), ev(1.02, T::Plucks)];
        assert_eq!(match_notes(&r, &e, 0.05), [(0, 0), (1, 1)]);
    }

    #[test]
    fn corpus_means_are_unweighted() {
        let p = |name: &str, acc: f64| PieceScore {
            name: name.into(),
            n_frames: if acc == 1.0 { 10 } else { 1000 },
            frame_accuracy: acc,
            note: NoteScore::from_counts(1, 1, 1),
        };
        let r = EvalReport::from_pieces(vec![p("a", 1.0), p("b", 0.5)]).unwrap();
        assert_eq!(r.mean_frame_accuracy, 0.75);
        assert!(EvalReport::from_pieces(vec![]).is_err());
        assert!(r.summary_csv("x").contains("x,75.00,100.00,100.00,100.00"));
    }
}
