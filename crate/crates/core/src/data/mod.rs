//! Clips, note events, concatenated sequences and their frame labels.

mod io;
mod sequence;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::AudioBuffer;
use crate::{Error, Result};

pub use io::{
    read_clip_corpus, read_events_jsonl, read_labels_bin, read_sequence, write_clip_corpus,
    write_events_jsonl, write_labels_bin, write_sequence, ClipManifestEntry,
};
pub use sequence::{
    concat_clips, generate_split, labels_to_events, materialize, plan_split, quantize_labels,
    ConcatConfig, SequenceExample, SplitMode,
};
pub use synth::{synth_clip, synth_pool, PoolConfig};

/// The eight playing techniques. Discriminants are the class ids used
/// throughout the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueClass {
    Vibrato = 0,
    UpPortamento = 1,
    DownPortamento = 2,
    ReturnPortamento = 3,
    Glissando = 4,
    Tremolo = 5,
    Harmonic = 6,
    Plucks = 7,
}

impl TechniqueClass {
    pub const ALL: [TechniqueClass; 8] = [
        TechniqueClass::Vibrato,
        TechniqueClass::UpPortamento,
        TechniqueClass::DownPortamento,
        TechniqueClass::ReturnPortamento,
        TechniqueClass::Glissando,
        TechniqueClass::Tremolo,
        TechniqueClass::Harmonic,
        TechniqueClass::Plucks,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::InvalidClass(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            TechniqueClass::Vibrato => "vibrato",
            TechniqueClass::UpPortamento => "up_portamento",
            TechniqueClass::DownPortamento => "down_portamento",
            TechniqueClass::ReturnPortamento => "return_portamento",
            TechniqueClass::Glissando => "glissando",
            TechniqueClass::Tremolo => "tremolo",
            TechniqueClass::Harmonic => "harmonic",
            TechniqueClass::Plucks => "plucks",
        }
    }
}

impl fmt::Display for TechniqueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TechniqueClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown technique '{s}'")))
    }
}

/// A single-technique audio clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// Identifier used for sequence uniqueness checks.
    pub id: u32,
    pub audio: AudioBuffer,
    pub technique: TechniqueClass,
}

impl Clip {
    pub const MIN_SECONDS: f64 = 0.3;
    pub const MAX_SECONDS: f64 = 15.0;

    pub fn new(id: u32, audio: AudioBuffer, technique: TechniqueClass) -> Result<Self> {
        let d = audio.duration();
        if !(Self::MIN_SECONDS..=Self::MAX_SECONDS).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "clip {id} lasts {d:.3} s, outside [0.3, 15.0] s"
            )));
        }
        Ok(Self {
            id,
            audio,
            technique,
        })
    }

    pub fn duration(&self) -> f64 {
        self.audio.duration()
    }
}

/// A note annotated with its playing technique. Times are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    #[serde(rename = "onset_s")]
    pub onset: f64,
    #[serde(rename = "offset_s")]
    pub offset: f64,
    pub technique: TechniqueClass,
}

impl NoteEvent {
    pub fn new(onset: f64, offset: f64, technique: TechniqueClass) -> Result<Self> {
        if !(onset >= 0.0 && onset < offset && offset.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "note event needs 0 <= onset < offset (got {onset}, {offset})"
            )));
        }
        Ok(Self {
            onset,
            offset,
            technique,
        })
    }
}
