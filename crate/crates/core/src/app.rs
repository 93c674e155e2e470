//! Command implementations behind the `gzipt` binary.
//!
//! Corpus layout under `paths.corpus`:
//!
//! ```text
//! corpus.json                 seed, config hash, split sizes
//! clips/{train,test}/         clip pools (WAV + manifest.jsonl)
//! {train,val,test}/seq_NNNNN  sequences (WAV + .events.jsonl + .labels.bin)
//! ```
//!
//! Checkpoints are `ipt.ckpt` / `onset.ckpt` with `<detector>_loss.csv`
//! beside them; reports go to `report.json` (or `report_no_fusion.json`)
//! and a one-row `summary*.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    materialize, plan_split, quantize_labels, read_events_jsonl, read_labels_bin, read_sequence,
    synth_pool, write_clip_corpus, write_events_jsonl, write_sequence, ConcatConfig, NoteEvent,
    PoolConfig, SplitMode,
};
use crate::dsp::{log_mel, MelConfig, Spectrogram};
use crate::fusion::{segments_to_events, FusionConfig};
use crate::metrics::{evaluate_corpus, EvalReport, Piece, ONSET_TOLERANCE};
use crate::models::{
    train, Detector, DetectorOutput, EpochLog, InputNorm, IptArchitecture, IptDetectorConfig,
    ModelConfig, OnsetDetectorConfig, TrainConfig, TrainReport,
};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::viz::{Figure, Rendered};
use crate::wav::read_wav;
use crate::{Error, Result, FRAME_SECONDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_pool: PoolConfig,
    pub test_pool: PoolConfig,
    pub concat: ConcatConfig,
    pub train_sequences: usize,
    /// Held-out sequences (12.8 s, drawn from the training pool) for the
    /// validation loss.
    pub val_sequences: usize,
    pub test_sequences: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_pool: PoolConfig::default(),
            test_pool: PoolConfig {
                clips_per_class: 8,
                ..PoolConfig::default()
            },
            concat: ConcatConfig::default(),
            train_sequences: 200,
            val_sequences: 16,
            test_sequences: 40,
        }
    }
}

/// Every setting of a run. Loaded from TOML or JSON; missing keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub ipt: IptDetectorConfig,
    pub onset: OnsetDetectorConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            data: DataConfig::default(),
            ipt: IptDetectorConfig::default(),
            onset: OnsetDetectorConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Command-line adjustments applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_fusion: bool,
    pub no_skip: bool,
    pub no_multi_shape: bool,
    pub beta: Option<f64>,
    pub cnn_ipt: bool,
    pub threshold: Option<f64>,
    pub corpus: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Ipt,
    Onset,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ipt => "ipt",
            DetectorKind::Onset => "onset",
        }
    }
}

impl RunConfig {
    /// Reads `.toml` or `.json`. Relative paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?,
        };
        if let Some(base) = path.parent() {
            for p in [
                &mut cfg.paths.corpus,
                &mut cfg.paths.checkpoints,
                &mut cfg.paths.reports,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.fusion.disabled |= o.no_fusion;
        if o.no_skip {
            self.ipt.skip_connection = false;
        }
        if o.no_multi_shape {
            self.onset.topology.multi_shape = false;
        }
        if let Some(b) = o.beta {
            self.onset.beta = b;
        }
        if o.cnn_ipt {
            self.ipt.architecture = IptArchitecture::Cnn(self.onset.topology.clone());
        }
        if let Some(t) = o.threshold {
            self.fusion.threshold = t;
        }
        for (slot, value) in [
            (&mut self.paths.corpus, &o.corpus),
            (&mut self.paths.checkpoints, &o.checkpoints),
            (&mut self.paths.reports, &o.reports),
        ] {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ipt.validate()?;
        self.onset.validate()?;
        self.train.validate()?;
        self.fusion.validate()?;
        let d = &self.data;
        if d.train_sequences == 0 || d.test_sequences == 0 {
            return Err(Error::InvalidArgument("split sizes must be positive".into()));
        }
        if d.concat.crossfade <= 0.0 || d.concat.min_len <= d.concat.crossfade {
            return Err(Error::InvalidArgument("invalid concatenation settings".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON of everything
    /// except paths.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("paths");
        }
        let digest = Sha256::digest(serde_json::to_vec(&v).expect("value serializes"));
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn model(&self, kind: DetectorKind) -> ModelConfig {
        match kind {
            DetectorKind::Ipt => ModelConfig::Ipt(self.ipt.clone()),
            DetectorKind::Onset => ModelConfig::Onset(self.onset.clone()),
        }
    }

    fn derived_seed(&self, salt: &str) -> u64 {
        let d = Sha256::digest(format!("{}:{salt}", self.seed).as_bytes());
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    pub fn checkpoint_path(&self, kind: DetectorKind) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.ckpt", kind.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub seed: u64,
    pub config_hash: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

fn seq_stem(i: usize) -> String {
    format!("seq_{i:05}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_corpus_info(corpus: &Path) -> Result<CorpusInfo> {
    let path = corpus.join("corpus.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

/// Synthesizes both clip pools and writes the train, val and test splits.
pub fn cmd_generate(cfg: &RunConfig) -> Result<CorpusInfo> {
    cfg.validate()?;
    let d = &cfg.data;
    let root = &cfg.paths.corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_pool = synth_pool(&d.train_pool, 0, &mut rng)?;
    let test_pool = synth_pool(&d.test_pool, 1_000_000, &mut rng)?;
    write_clip_corpus(&root.join("clips/train"), &train_pool)?;
    write_clip_corpus(&root.join("clips/test"), &test_pool)?;

    let plans = plan_split(&train_pool, d.train_sequences + d.val_sequences, &d.concat, &mut rng)?;
    let (train_plans, val_plans) = plans.split_at(d.train_sequences);
    for (split, plans) in [("train", train_plans), ("val", val_plans)] {
        for (i, plan) in plans.iter().enumerate() {
            let seq = materialize(&train_pool, plan, SplitMode::Train, &d.concat)?;
            write_sequence(&root.join(split), &seq_stem(i), &seq, true)?;
        }
    }
    let test_plans = plan_split(&test_pool, d.test_sequences, &d.concat, &mut rng)?;
    for (i, plan) in test_plans.iter().enumerate() {
        let seq = materialize(&test_pool, plan, SplitMode::Test, &d.concat)?;
        write_sequence(&root.join("test"), &seq_stem(i), &seq, true)?;
    }
    let info = CorpusInfo {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        train: d.train_sequences,
        val: d.val_sequences,
        test: d.test_sequences,
    };
    write_json(&root.join("corpus.json"), &info)?;
    Ok(info)
}

/// Log-mel features and labels of one stored sequence.
struct Features {
    spec: Spectrogram,
    events: Vec<NoteEvent>,
    onset_labels: Vec<u8>,
    ipt_labels: Vec<u8>,
}

fn load_split(corpus: &Path, split: &str, count: usize) -> Result<Vec<Features>> {
    let mel = MelConfig::default();
    (0..count)
        .map(|i| {
            let seq = read_sequence(&corpus.join(split), &seq_stem(i))?;
            Ok(Features {
                spec: log_mel(&seq.audio, &mel)?,
                events: seq.events,
                onset_labels: seq.onset_labels,
                ipt_labels: seq.ipt_labels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub report: TrainReport,
}

/// Trains one detector on the corpus and writes its checkpoint and loss log.
pub fn cmd_train(
    cfg: &RunConfig,
    kind: DetectorKind,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let info = read_corpus_info(&cfg.paths.corpus)?;
    let train_set = load_split(&cfg.paths.corpus, "train", info.train)?;
    let val_set = load_split(&cfg.paths.corpus, "val", info.val)?;
    let norm = InputNorm::fit(train_set.iter().map(|f| &f.spec))?;
    let init_seed = cfg.derived_seed(&format!("{}-init", kind.name()));
    let mut det = Detector::new(cfg.model(kind), norm, init_seed)?;
    let examples = |set: &[Features]| -> Result<Vec<_>> {
        set.iter()
            .map(|f| {
                let labels = match kind {
                    DetectorKind::Ipt => &f.ipt_labels,
                    DetectorKind::Onset => &f.onset_labels,
                };
                det.example(&f.spec, labels)
            })
            .collect()
    };
    let train_ex = examples(&train_set)?;
    let val_ex = examples(&val_set)?;
    drop(train_set);
    let tc = TrainConfig {
        seed: cfg.derived_seed(&format!("{}-train", kind.name())),
        ..cfg.train
    };
    let report = train(&mut det, &train_ex, &val_ex, &tc, on_epoch)?;

    let checkpoint = cfg.checkpoint_path(kind);
    let loss_csv = cfg
        .paths
        .checkpoints
        .join(format!("{}_loss.csv", kind.name()));
    fs::create_dir_all(&cfg.paths.checkpoints).map_err(|e| Error::io(&cfg.paths.checkpoints, e))?;
    let extra = serde_json::json!({
        "config_hash": cfg.hash(),
        "run_seed": cfg.seed,
        "corpus_hash": info.config_hash,
        "train": tc,
        "initial_val_loss": report.initial_val_loss,
    });
    save_checkpoint(&checkpoint, &det.to_checkpoint(init_seed, report.steps, extra))?;
    write_text(&loss_csv, &report.to_csv())?;
    Ok(TrainOutcome {
        checkpoint,
        loss_csv,
        report,
    })
}

pub fn load_detector(path: &Path) -> Result<Detector> {
    Detector::from_checkpoint(&load_checkpoint(path)?)
}

fn load_detectors(cfg: &RunConfig) -> Result<(Detector, Detector)> {
    let ipt = load_detector(&cfg.checkpoint_path(DetectorKind::Ipt))?;
    let onset = load_detector(&cfg.checkpoint_path(DetectorKind::Onset))?;
    if !matches!(ipt.config, ModelConfig::Ipt(_)) || !matches!(onset.config, ModelConfig::Onset(_)) {
        return Err(Error::Checkpoint("ipt.ckpt / onset.ckpt hold the wrong detectors".into()));
    }
    Ok((ipt, onset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub system: String,
    pub seed: u64,
    pub config_hash: String,
    pub fusion: FusionConfig,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report_path: PathBuf,
    pub summary_path: PathBuf,
    pub file: ReportFile,
}

/// Scores both detectors on the test split.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let (ipt, onset) = load_detectors(cfg)?;
    let info = read_corpus_info(&cfg.paths.corpus)?;
    let pieces = load_split(&cfg.paths.corpus, "test", info.test)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(Piece {
                name: seq_stem(i),
                output: DetectorOutput::run(&ipt, &onset, &f.spec)?,
                events: f.events,
                frame_labels: f.ipt_labels.iter().map(|&c| c as usize).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_corpus(&pieces, &cfg.fusion, ONSET_TOLERANCE)?;
    let suffix = if cfg.fusion.disabled { "_no_fusion" } else { "" };
    let system = if cfg.fusion.disabled {
        "no_onset_fusion"
    } else {
        "fused"
    };
    let file = ReportFile {
        system: system.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        fusion: cfg.fusion,
        report,
    };
    let report_path = cfg.paths.reports.join(format!("report{suffix}.json"));
    let summary_path = cfg.paths.reports.join(format!("summary{suffix}.csv"));
    write_json(&report_path, &file)?;
    write_text(&summary_path, &file.report.summary_csv(system))?;
    Ok(EvalOutcome {
        report_path,
        summary_path,
        file,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub spectrogram: Spectrogram,
    pub output: DetectorOutput,
    pub onsets: Vec<u8>,
    pub raw_classes: Vec<usize>,
    pub fused_classes: Vec<usize>,
    pub events: Vec<NoteEvent>,
}

fn infer(cfg: &RunConfig, audio: &Path) -> Result<Inference> {
    cfg.fusion.validate()?;
    let (ipt, onset) = load_detectors(cfg)?;
    let spectrogram = log_mel(&read_wav(audio)?, &MelConfig::default())?;
    let output = DetectorOutput::run(&ipt, &onset, &spectrogram)?;
    let fused = cfg.fusion.apply(&output.onset_probs, &output.ipt_probs)?;
    let raw = FusionConfig {
        disabled: true,
        ..cfg.fusion
    }
    .apply(&output.onset_probs, &output.ipt_probs)?;
    let onsets = if cfg.fusion.disabled {
        vec![0; output.n_frames()]
    } else {
        let mut o = crate::fusion::threshold_onsets(&output.onset_probs, cfg.fusion.threshold);
        if cfg.fusion.min_gap > 1 {
            o = crate::fusion::suppress_onsets(&o, cfg.fusion.min_gap);
        }
        o
    };
    Ok(Inference {
        events: segments_to_events(&fused, FRAME_SECONDS)?,
        fused_classes: fused.frame_classes(),
        raw_classes: raw.frame_classes(),
        onsets,
        output,
        spectrogram,
    })
}

/// Runs both detectors and fusion on one WAV and writes the events as JSONL.
pub fn cmd_infer(cfg: &RunConfig, audio: &Path, out: &Path) -> Result<Inference> {
    let inf = infer(cfg, audio)?;
    write_events_jsonl(out, &inf.events)?;
    Ok(inf)
}

pub fn write_probs(ipt_path: &Path, onset_path: &Path, output: &DetectorOutput) -> Result<()> {
    write_json(ipt_path, &output.ipt_probs)?;
    write_json(onset_path, &output.onset_probs)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Fuses stored probabilities (`[[f64; T]; n]` and `[f64; T]` JSON arrays).
pub fn cmd_fuse(cfg: &RunConfig, ipt_probs: &Path, onset_probs: &Path, out: &Path) -> Result<Vec<NoteEvent>> {
    cfg.fusion.validate()?;
    let ipt: Vec<Vec<f64>> = read_json(ipt_probs)?;
    let onset: Vec<f64> = read_json(onset_probs)?;
    let output = DetectorOutput::new(ipt, onset)?;
    let fused = cfg.fusion.apply(&output.onset_probs, &output.ipt_probs)?;
    let events = segments_to_events(&fused, FRAME_SECONDS)?;
    write_events_jsonl(out, &events)?;
    Ok(events)
}

/// Frame classes from `.labels.bin` or an events JSONL file.
fn read_target(path: &Path, n_frames: usize) -> Result<Vec<usize>> {
    let classes = if path.extension().is_some_and(|e| e == "bin") {
        read_labels_bin(path)?.1
    } else {
        quantize_labels(&read_events_jsonl(path)?, n_frames)?.1
    };
    if classes.len() != n_frames {
        return Err(Error::parse(
            path,
            format!("{} label frames for {n_frames} audio frames", classes.len()),
        ));
    }
    Ok(classes.into_iter().map(usize::from).collect())
}

/// Renders the stacked-panel figure for one WAV.
pub fn cmd_visualize(cfg: &RunConfig, audio: &Path, labels: Option<&Path>, out: &Path) -> Result<Rendered> {
    let inf = infer(cfg, audio)?;
    let target = labels
        .map(|p| read_target(p, inf.spectrogram.n_frames))
        .transpose()?;
    let fig = Figure {
        spectrogram: &inf.spectrogram,
        onsets: &inf.onsets,
        raw_classes: &inf.raw_classes,
        fused_classes: &inf.fused_classes,
        target: target.as_deref(),
        text: vec![
            ("config_hash".into(), cfg.hash()),
            ("seed".into(), cfg.seed.to_string()),
        ],
    };
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fig.save(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_map_to_ablations() {
        let mut c = RunConfig::default();
        let base = c.hash();
        c.apply(&Overrides {
            no_skip: true,
            no_multi_shape: true,
            beta: Some(1.0),
            cnn_ipt: true,
            threshold: Some(0.3),
            no_fusion: true,
            seed: Some(9),
            ..Overrides::default()
        });
        assert!(!c.ipt.skip_connection);
        assert!(!c.onset.topology.multi_shape);
        assert_eq!(c.onset.beta, 1.0);
        assert!(matches!(c.ipt.architecture, IptArchitecture::Cnn(ref t) if !t.multi_shape));
        assert_eq!(c.fusion.threshold, 0.3);
        assert!(c.fusion.disabled);
        assert_eq!(c.seed, 9);
        assert_ne!(c.hash(), base);
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.corpus = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn toml_and_json_configs() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("run.toml");
        fs::write(
            &toml_path,
            "seed = 5\n[paths]\ncorpus = \"c\"\n[ipt]\nencoder_channels = [2, 2, 2, 2, 2]\n[onset]\nbeta = 1.5\nhidden_fc = 7\n",
        )
        .unwrap();
        let c = RunConfig::load(&toml_path).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.paths.corpus, dir.path().join("c"));
        assert_eq!(c.ipt.encoder_channels, [2; 5]);
        assert_eq!(c.onset.beta, 1.5);
        assert_eq!(c.onset.topology.hidden_fc, 7);
        assert_eq!(c.train, TrainConfig::default());

        let json_path = dir.path().join("run.json");
        fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&json_path).unwrap(), c);

        fs::write(&toml_path, "seed = \"x\"").unwrap();
        assert!(matches!(RunConfig::load(&toml_path), Err(Error::Parse { .. })));
    }
}
