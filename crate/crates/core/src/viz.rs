//! Stacked-panel PNG of a piece: log-mel, onsets, raw argmax, fused result
//! and (optionally) the target labels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dsp::Spectrogram;
use crate::{Error, Result, N_IPT};

const CLASS_ROW: usize = 6;
const ONSET_PANEL: usize = 16;
const GAP: usize = 4;
const BACKGROUND: [u8; 3] = [255, 255, 255];
const GRID: [u8; 3] = [225, 225, 225];
const ONSET: [u8; 3] = [220, 30, 30];

/// Class colours, indexed by class id.
const PALETTE: [[u8; 3]; N_IPT] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
];

/// Everything drawn for one piece. All rows share the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure<'a> {
    pub spectrogram: &'a Spectrogram,
    pub onsets: &'a [u8],
    pub raw_classes: &'a [usize],
    pub fused_classes: &'a [usize],
    pub target: Option<&'a [usize]>,
    /// Written as PNG text chunks.
    pub text: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rendered {
    pub panels: usize,
    pub width: usize,
    pub height: usize,
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&BACKGROUND);
        }
        Self { width, height, rgb }
    }

    fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }
}

impl Figure<'_> {
    fn check(&self) -> Result<usize> {
        let t = self.spectrogram.n_frames;
        let lens = [self.onsets.len(), self.raw_classes.len(), self.fused_classes.len()];
        if t == 0 || lens.iter().any(|&l| l != t) || self.target.is_some_and(|x| x.len() != t) {
            return Err(Error::Shape(format!("every panel needs {t} frames")));
        }
        let all = self
            .raw_classes
            .iter()
            .chain(self.fused_classes)
            .chain(self.target.unwrap_or(&[]));
        if let Some(&c) = all.into_iter().find(|&&c| c >= N_IPT) {
            return Err(Error::InvalidClass(c));
        }
        Ok(t)
    }

    pub fn panels(&self) -> usize {
        4 + usize::from(self.target.is_some())
    }

    fn draw(&self) -> Result<Canvas> {
        let t = self.check()?;
        let spec = self.spectrogram;
        let class_h = N_IPT * CLASS_ROW;
        let n_class_panels = 2 + usize::from(self.target.is_some());
        let heights: Vec<usize> = [spec.n_mels, ONSET_PANEL]
            .into_iter()
            .chain(std::iter::repeat_n(class_h, n_class_panels))
            .collect();
        let height = heights.iter().sum::<usize>() + GAP * (heights.len() - 1);
        let mut cv = Canvas::new(t, height);

        // Log-mel, low frequencies at the bottom, grey levels over the value range.
        let (lo, hi) = spec
            .values
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for m in 0..spec.n_mels {
            let y = spec.n_mels - 1 - m;
            for x in 0..t {
                let g = 255 - ((spec.get(m, x) - lo) / span * 255.0).round() as u8;
                cv.set(x, y, [g, g, g]);
            }
        }
        let mut top = spec.n_mels + GAP;

        for (x, &o) in self.onsets.iter().enumerate() {
            if o != 0 {
                for y in top..top + ONSET_PANEL {
                    cv.set(x, y, ONSET);
                }
            }
        }
        top += ONSET_PANEL + GAP;

        let rows: Vec<&[usize]> = [Some(self.raw_classes), Some(self.fused_classes), self.target]
            .into_iter()
            .flatten()
            .collect();
        for (p, classes) in rows.into_iter().enumerate() {
            for row in 0..N_IPT {
                for x in 0..t {
                    let y0 = top + (N_IPT - 1 - row) * CLASS_ROW;
                    let c = if classes[x] == row {
                        PALETTE[row]
                    } else if p < 2 && self.onsets[x] != 0 {
                        ONSET
                    } else {
                        GRID
                    };
                    for y in y0..y0 + CLASS_ROW - 1 {
                        cv.set(x, y, c);
                    }
                }
            }
            top += class_h + GAP;
        }
        Ok(cv)
    }

    /// Encodes the figure as an 8-bit RGB PNG.
    pub fn encode(&self, out: impl Write) -> Result<Rendered> {
        let cv = self.draw()?;
        let fail = |e: png::EncodingError| Error::InvalidArgument(format!("PNG encoding: {e}"));
        let mut enc = png::Encoder::new(out, cv.width as u32, cv.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk("panels".into(), self.panels().to_string())
            .map_err(fail)?;
        for (k, v) in &self.text {
            enc.add_text_chunk(k.clone(), v.clone()).map_err(fail)?;
        }
        let mut w = enc.write_header().map_err(fail)?;
        w.write_image_data(&cv.rgb).map_err(fail)?;
        w.finish().map_err(fail)?;
        Ok(Rendered {
            panels: self.panels(),
            width: cv.width,
            height: cv.height,
        })
    }

    pub fn save(&self, path: &Path) -> Result<Rendered> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let r = self.encode(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: usize) -> Spectrogram {
        Spectrogram {
            n_mels: 128,
            n_frames: t,
            values: (0..128 * t).map(|i| (i % 37) as f64).collect(),
            frame_duration: 0.05,
        }
    }

    #[test]
    fn panel_count_and_determinism() {
        let s = spec(10);
        let onsets = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let raw = [0, 0, 1, 0, 2, 2, 2, 3, 2, 2];
        let fused = [0, 0, 0, 0, 2, 2, 2, 2, 2, 2];
        let mut fig = Figure {
            spectrogram: &s,
            onsets: &onsets,
            raw_classes: &raw,
            fused_classes: &fused,
            target: None,
            text: vec![("seed".into(), "3".into())],
        };
        let mut a = Vec::new();
        let r4 = fig.encode(&mut a).unwrap();
        assert_eq!(r4.panels, 4);
        let mut b = Vec::new();
        fig.encode(&mut b).unwrap();
        assert_eq!(a, b);
        fig.target = Some(&fused);
        let r5 = fig.encode(&mut Vec::new()).unwrap();
        assert_eq!(r5.panels, 5);
        assert_eq!(r5.width, 10);
        assert_eq!(r5.height, r4.height + N_IPT * CLASS_ROW + GAP);

        let dec = png::Decoder::new(std::io::Cursor::new(a)).read_info().unwrap();
        let text = &dec.info().uncompressed_latin1_text;
        assert!(text.iter().any(|c| c.keyword == "seed" && c.text == "3"));
        assert!(text.iter().any(|c| c.keyword == "panels" && c.text == "4"));
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = spec(4);
        let fig = Figure {
            spectrogram: &s,
            onsets: &[0; 3],
            raw_classes: &[0; 4],
            fused_classes: &[0; 4],
            target: None,
            text: Vec::new(),
        };
        assert!(fig.encode(Vec::new()).is_err());
    }
}
