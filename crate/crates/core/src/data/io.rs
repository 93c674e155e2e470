//! On-disk layouts.
//!
//! Clip corpus: a directory of WAV files plus `manifest.jsonl`, one
//! `{"file", "technique", "duration"}` record per clip; the clip id is the
//! record's line index.
//!
//! Sequence: `<stem>.wav`, `<stem>.events.jsonl` (one
//! `{"onset_s", "offset_s", "technique"}` record per note) and, optionally,
//! `<stem>.labels.bin`: `u32` little-endian frame count `T`, then `T` onset
//! bytes, then `T` class-id bytes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quantize_labels, Clip, NoteEvent, SequenceExample, TechniqueClass};
use crate::wav::{read_wav, write_wav};
use crate::{Error, Result, HOP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifestEntry {
    pub file: String,
    pub technique: TechniqueClass,
    pub duration: f64,
}

pub fn write_clip_corpus(dir: &Path, clips: &[Clip]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        let file = format!("clip_{i:05}_{}.wav", c.technique.name());
        write_wav(&dir.join(&file), &c.audio)?;
        lines.push(ClipManifestEntry {
            file,
            technique: c.technique,
            duration: c.duration(),
        });
    }
    write_jsonl(&dir.join("manifest.jsonl"), &lines)
}

pub fn read_clip_corpus(dir: &Path) -> Result<Vec<Clip>> {
    let entries: Vec<ClipManifestEntry> = read_jsonl(&dir.join("manifest.jsonl"))?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let audio = read_wav(&dir.join(&e.file))?;
            Clip::new(i as u32, audio, e.technique)
        })
        .collect()
}

pub fn write_events_jsonl(path: &Path, events: &[NoteEvent]) -> Result<()> {
    write_jsonl(path, events)
}

pub fn read_events_jsonl(path: &Path) -> Result<Vec<NoteEvent>> {
    read_jsonl(path)
}

pub fn write_labels_bin(path: &Path, onset_labels: &[u8], ipt_labels: &[u8]) -> Result<()> {
    if onset_labels.len() != ipt_labels.len() {
        return Err(Error::Shape("label vectors differ in length".into()));
    }
    let mut buf = Vec::with_capacity(4 + 2 * onset_labels.len());
    buf.extend_from_slice(&(onset_labels.len() as u32).to_le_bytes());
    buf.extend_from_slice(onset_labels);
    buf.extend_from_slice(ipt_labels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels_bin(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 4 {
        return Err(Error::parse(path, "truncated header"));
    }
    let t = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    if buf.len() != 4 + 2 * t {
        return Err(Error::parse(
            path,
            format!("expected {} bytes for {t} frames, found {}", 4 + 2 * t, buf.len()),
        ));
    }
    Ok((buf[4..4 + t].to_vec(), buf[4 + t..].to_vec()))
}

/// Writes `<dir>/<stem>.wav`, `.events.jsonl` and, if `with_labels`,
/// `.labels.bin`.
pub fn write_sequence(
    dir: &Path,
    stem: &str,
    seq: &SequenceExample,
    with_labels: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&dir.join(format!("{stem}.wav")), &seq.audio)?;
    write_events_jsonl(&dir.join(format!("{stem}.events.jsonl")), &seq.events)?;
    if with_labels {
        write_labels_bin(
            &dir.join(format!("{stem}.labels.bin")),
            &seq.onset_labels,
            &seq.ipt_labels,
        )?;
    }
    Ok(())
}

/// Reads a sequence written by [`write_sequence`]. Labels come from the
/// cached `.labels.bin` when present, otherwise from the events.
pub fn read_sequence(dir: &Path, stem: &str) -> Result<SequenceExample> {
    let audio = read_wav(&dir.join(format!("{stem}.wav")))?;
    let events = read_events_jsonl(&dir.join(format!("{stem}.events.jsonl")))?;
    let n_frames = audio.len() / HOP;
    let cache = dir.join(format!("{stem}.labels.bin"));
    let (onset_labels, ipt_labels) = if cache.exists() {
        let (o, i) = read_labels_bin(&cache)?;
        if o.len() != n_frames {
            return Err(Error::parse(
                &cache,
                format!("{} label frames for {n_frames} audio frames", o.len()),
            ));
        }
        (o, i)
    } else {
        quantize_labels(&events, n_frames)?
    };
    Ok(SequenceExample {
        audio,
        events,
        onset_labels,
        ipt_labels,
        clip_ids: Vec::new(),
    })
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::parse(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{concat_clips, ConcatConfig};
    use crate::dsp::AudioBuffer;
    use crate::SAMPLE_RATE;

    fn clip(id: u32, secs: f64, t: TechniqueClass) -> Clip {
        let n = (secs * 44100.0) as usize;
        let samples = (0..n).map(|i| ((i % 100) as f32 / 100.0) - 0.5).collect();
        Clip::new(id, AudioBuffer::new(samples, SAMPLE_RATE).unwrap(), t).unwrap()
    }

    #[test]
    fn labels_bin_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.labels.bin");
        write_labels_bin(&p, &[1, 0, 0], &[4, 4, 2]).unwrap();
        assert_eq!(fs::read(&p).unwrap(), [3, 0, 0, 0, 1, 0, 0, 4, 4, 2]);
        assert_eq!(read_labels_bin(&p).unwrap(), (vec![1, 0, 0], vec![4, 4, 2]));
        fs::write(&p, [5, 0, 0, 0, 1]).unwrap();
        assert!(read_labels_bin(&p).is_err());
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = clip(0, 6.5, TechniqueClass::Glissando);
        let b = clip(1, 6.5, TechniqueClass::Harmonic);
        let seq = concat_clips(&[&a, &b], &ConcatConfig::default()).unwrap();
        write_sequence(dir.path(), "s0", &seq, true).unwrap();
        let back = read_sequence(dir.path(), "s0").unwrap();
        assert_eq!(back.audio, seq.audio);
        assert_eq!(back.events, seq.events);
        assert_eq!(back.ipt_labels, seq.ipt_labels);
        fs::remove_file(dir.path().join("s0.labels.bin")).unwrap();
        let again = read_sequence(dir.path(), "s0").unwrap();
        assert_eq!(again.onset_labels, seq.onset_labels);
    }

    #[test]
    fn clip_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clips = vec![clip(0, 0.5, TechniqueClass::Tremolo), clip(1, 0.7, TechniqueClass::Plucks)];
        write_clip_corpus(dir.path(), &clips).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert!(manifest.starts_with(r#"{"file":"clip_00000_tremolo.wav","technique":"tremolo","duration":0.5}"#));
        assert_eq!(read_clip_corpus(dir.path()).unwrap(), clips);
    }

    #[test]
    fn bad_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.events.jsonl");
        fs::write(&p, "{\"onset_s\":0,\"offset_s\":1,\"technique\":\"plucks\"}\nnope\n").unwrap();
        let err = read_events_jsonl(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
