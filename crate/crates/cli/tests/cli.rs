use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 11

[data]
train_sequences = 3
val_sequences = 1
test_sequences = 2

[data.train_pool]
clips_per_class = 2

[data.test_pool]
clips_per_class = 2

[ipt]
encoder_channels = [2, 2, 2, 2, 2]

[onset]
first_layer_channels = 2
conv_channels = [2, 2]
hidden_fc = 4

[train]
epochs = 2
batch_size = 2
"#;

fn gzipt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gzipt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gzipt(dir, args);
    assert!(
        out.status.success(),
        "gzipt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn wav_len(path: &Path) -> usize {
    match hound::WavReader::open(path) {
        Ok(r) => r.len() as usize,
        Err(e) => panic!("{}: {e}", path.display()),
    }
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_pipeline() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["--config", "run.toml"];
    ok(d, &[&cfg[..], &["generate"]].concat());

    for i in 0..3 {
        assert_eq!(wav_len(&d.join(format!("corpus/train/seq_{i:05}.wav"))), 564_480);
    }
    for i in 0..2 {
        assert!(wav_len(&d.join(format!("corpus/test/seq_{i:05}.wav"))) > 564_480);
    }

    ok(d, &[&cfg[..], &["train"]].concat());
    let csv = fs::read_to_string(d.join("checkpoints/ipt_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    assert!(d.join("checkpoints/onset.ckpt").exists());

    let stdout = ok(d, &[&cfg[..], &["eval"]].concat());
    assert!(stdout.contains("fused"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["per_piece"].as_array().unwrap().len(), 2);
    assert_eq!(report["seed"], 11);
    ok(d, &[&cfg[..], &["eval", "--no-fusion"]].concat());
    assert!(d.join("reports/report_no_fusion.json").exists());

    let test_wav = "corpus/test/seq_00000.wav";
    ok(
        d,
        &[
            &cfg[..],
            &["infer", test_wav, "-o", "ev.jsonl", "--ipt-probs", "i.json", "--onset-probs", "o.json"],
        ]
        .concat(),
    );
    let events = fs::read_to_string(d.join("ev.jsonl")).unwrap();
    assert!(events.lines().count() >= 1);
    assert!(events.lines().next().unwrap().contains("\"onset_s\":0.0"));

    ok(d, &[&cfg[..], &["fuse", "i.json", "o.json", "-o", "fused.jsonl"]].concat());
    assert_eq!(fs::read_to_string(d.join("fused.jsonl")).unwrap(), events);

    let four = ok(d, &[&cfg[..], &["visualize", test_wav, "-o", "a.png"]].concat());
    assert!(four.starts_with("4 panels"));
    let five = ok(
        d,
        &[
            &cfg[..],
            &["visualize", test_wav, "-o", "b.png", "--labels", "corpus/test/seq_00000.labels.bin"],
        ]
        .concat(),
    );
    assert!(five.starts_with("5 panels"));
    ok(d, &[&cfg[..], &["visualize", test_wav, "-o", "a2.png"]].concat());
    assert_eq!(fs::read(d.join("a.png")).unwrap(), fs::read(d.join("a2.png")).unwrap());
}

#[test]
fn ablation_flags_reach_the_checkpoint() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "generate"]);
    ok(
        d,
        &["--config", "run.toml", "--beta", "1.0", "--no-multi-shape", "--no-skip", "train"],
    );
    let header = |name: &str| -> serde_json::Value {
        let bytes = fs::read(d.join("checkpoints").join(name)).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        serde_json::from_slice(&bytes[8..8 + n]).unwrap()
    };
    let onset = header("onset.ckpt");
    assert_eq!(onset["meta"]["model"]["beta"], 1.0);
    assert_eq!(onset["meta"]["model"]["multi_shape"], false);
    let ipt = header("ipt.ckpt");
    assert_eq!(ipt["meta"]["model"]["skip_connection"], false);
    let nodes = ipt["nodes"].as_array().unwrap();
    assert!(nodes.iter().all(|n| n["layer"]["kind"] != "add"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    let bad_beta = gzipt(d, &["--config", "run.toml", "--beta", "2.5", "generate"]);
    assert_eq!(bad_beta.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_beta.stderr).contains("beta"));

    let missing = gzipt(d, &["--config", "run.toml", "eval"]);
    assert_eq!(missing.status.code(), Some(2));

    let no_config = gzipt(d, &["--config", "absent.toml", "generate"]);
    assert_eq!(no_config.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_config.stderr).contains("absent.toml"));

    ok(d, &["--config", "run.toml", "generate"]);
    let mut cfg = TINY.replace("epochs = 2", "epochs = 2\nlr = 1e38");
    cfg.push('\n');
    fs::write(d.join("diverge.toml"), cfg).unwrap();
    let diverged = gzipt(d, &["--config", "diverge.toml", "--corpus", "corpus", "train", "ipt"]);
    assert_eq!(
        diverged.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
}
