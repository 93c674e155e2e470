use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guzheng_ipt::app::{self, DetectorKind, Overrides, RunConfig};
use guzheng_ipt::Error;

/// Guzheng playing-technique detection.
#[derive(Debug, Parser)]
#[command(name = "gzipt", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run config (TOML or JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the per-frame IPT argmax instead of onset voting.
    #[arg(long, global = true)]
    no_fusion: bool,
    /// Drop the decoder skip connection of the FCN IPT detector.
    #[arg(long, global = true)]
    no_skip: bool,
    /// Use 3x3 kernels for the whole first onset layer.
    #[arg(long, global = true)]
    no_multi_shape: bool,
    /// Positive-class weight of the onset loss, in (0, 2).
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Replace the FCN IPT detector with the onset detector's CNN layout.
    #[arg(long, global = true)]
    cnn_ipt: bool,
    /// Onset probability threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Ipt,
    Onset,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize clip pools and write the train, val and test splits.
    Generate,
    /// Train a detector on the generated corpus.
    Train {
        #[arg(value_enum, default_value = "both")]
        detector: Which,
    },
    /// Score the trained detectors on the test split.
    Eval,
    /// Detect techniques in one WAV file and write note events.
    Infer {
        audio: PathBuf,
        #[arg(short, long, default_value = "events.jsonl")]
        out: PathBuf,
        /// Also write the raw IPT probabilities (JSON `[n][T]`).
        #[arg(long)]
        ipt_probs: Option<PathBuf>,
        /// Also write the raw onset probabilities (JSON `[T]`).
        #[arg(long)]
        onset_probs: Option<PathBuf>,
    },
    /// Fuse stored probability files into note events.
    Fuse {
        ipt_probs: PathBuf,
        onset_probs: PathBuf,
        #[arg(short, long, default_value = "events.jsonl")]
        out: PathBuf,
    },
    /// Render spectrogram, onsets, raw and fused classes (and target) as PNG.
    Visualize {
        audio: PathBuf,
        #[arg(short, long, default_value = "figure.png")]
        out: PathBuf,
        /// Target labels: `.labels.bin` or events JSONL.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

fn config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: c.seed,
        no_fusion: c.no_fusion,
        no_skip: c.no_skip,
        no_multi_shape: c.no_multi_shape,
        beta: c.beta,
        cnn_ipt: c.cnn_ipt,
        threshold: c.threshold,
        corpus: c.corpus.clone(),
        checkpoints: c.checkpoints.clone(),
        reports: c.reports.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Generate => {
            let info = app::cmd_generate(&cfg)?;
            println!(
                "wrote {} train, {} val, {} test sequences to {} (config {}, seed {})",
                info.train,
                info.val,
                info.test,
                cfg.paths.corpus.display(),
                info.config_hash,
                info.seed
            );
        }
        Command::Train { detector } => {
            let kinds: &[DetectorKind] = match detector {
                Which::Ipt => &[DetectorKind::Ipt],
                Which::Onset => &[DetectorKind::Onset],
                Which::Both => &[DetectorKind::Onset, DetectorKind::Ipt],
            };
            for &kind in kinds {
                let out = app::cmd_train(&cfg, kind, |e| {
                    let val = e.val_loss.map(|v| format!(" val {v:.5}")).unwrap_or_default();
                    eprintln!("[{}] epoch {:>3} train {:.5}{val}", kind.name(), e.epoch, e.train_loss);
                })?;
                println!("{} -> {}", kind.name(), out.checkpoint.display());
            }
        }
        Command::Eval => {
            let out = app::cmd_eval(&cfg)?;
            let r = &out.file.report;
            println!(
                "{}: frame accuracy {:.2}%, note P {:.2}% R {:.2}% F1 {:.2}% over {} pieces -> {}",
                out.file.system,
                100.0 * r.mean_frame_accuracy,
                100.0 * r.mean_note.precision,
                100.0 * r.mean_note.recall,
                100.0 * r.mean_note.f1,
                r.per_piece.len(),
                out.report_path.display()
            );
        }
        Command::Infer {
            audio,
            out,
            ipt_probs,
            onset_probs,
        } => {
            let inf = app::cmd_infer(&cfg, &audio, &out)?;
            if let (Some(i), Some(o)) = (&ipt_probs, &onset_probs) {
                app::write_probs(i, o, &inf.output)?;
            } else if ipt_probs.is_some() || onset_probs.is_some() {
                return Err(Error::InvalidArgument(
                    "--ipt-probs and --onset-probs must be given together".into(),
                ));
            }
            println!("{} events -> {}", inf.events.len(), out.display());
        }
        Command::Fuse {
            ipt_probs,
            onset_probs,
            out,
        } => {
            let events = app::cmd_fuse(&cfg, &ipt_probs, &onset_probs, &out)?;
            println!("{} events -> {}", events.len(), out.display());
        }
        Command::Visualize { audio, out, labels } => {
            let r = app::cmd_visualize(&cfg, &audio, labels.as_deref(), &out)?;
            println!("{} panels, {}x{} -> {}", r.panels, r.width, r.height, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
