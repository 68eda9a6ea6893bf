use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vocseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocseg"))
        .args(args)
        .env("VOCSEG_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vocseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"{
  "model": {"image_size": 16, "patch_size": 4, "d_model": 16, "n_heads": 2,
            "n_encoder_layers": 2, "n_decoder_layers": 1, "projection_dim": 8},
  "train": {"learning_rate": 0.003, "batch_size": 4, "max_epochs": 2,
            "unfreeze_schedule": [{"epoch": 1, "block": 1}, {"epoch": 1, "block": 0}]}
}"#;

fn tiny_setup(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    ok(&["generate-data", "--speakers", "3", "--frames-per-speaker", "6", "--augment", "1", "--out", p(&data)]);
    let cfg = dir.join("run.json");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    (p(&data).to_owned(), p(&cfg).to_owned())
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("generate-data", &["--speakers", "--frames-per-speaker", "--augment", "--seed", "--audio-frames", "--audio-features", "--out"]),
        ("train", &["--config", "--data", "--seed", "--epochs", "--lr", "--batch-size", "--patience", "--fusion", "--contrastive", "--held-out", "--out"]),
        ("eval", &["--checkpoint", "--data", "--held-out", "--video-only", "--out"]),
        ("ablate", &["--config", "--data", "--seed", "--epochs", "--configs", "--seeds", "--folds", "--threads", "--out"]),
        ("metrics", &["--spacing", "--out", "PRED_DIR", "TRUTH_DIR"]),
        ("verify", &["gradients", "metrics", "losses", "all"]),
    ];
    let top = ok(&["--help"]);
    for (sub, flags) in cases {
        assert!(top.contains(sub), "top-level help misses {sub}");
        let help = ok(&[sub, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "{sub} --help misses {f}");
        }
    }
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = vocseg(&["train", "--data", p(&dir.path().join("absent")), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}

#[test]
fn unknown_config_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_setup(dir.path());
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let out = vocseg(&["train", "--config", p(&cfg), "--data", &data, "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rat"));
}

#[test]
fn identical_arguments_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = tiny_setup(dir.path());
    let mut seen = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["train", "--config", &cfg, "--data", &data, "--held-out", "1", "--seed", "4", "--out", p(&out.join("train"))]);
        let ckpt = out.join("train/model.ckpt");
        ok(&["eval", "--checkpoint", p(&ckpt), "--data", &data, "--held-out", "1", "--out", p(&out.join("eval"))]);
        let files = ["train/model.ckpt", "train/train.log.csv", "train/train_summary.json", "eval/metrics.csv", "eval/report.json", "eval/summary.md"];
        seen.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert!(seen[0] == seen[1]);
}

#[test]
fn eval_outputs_feed_the_metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = tiny_setup(dir.path());
    let train_dir = dir.path().join("train");
    ok(&["train", "--config", &cfg, "--data", &data, "--epochs", "1", "--out", p(&train_dir)]);
    let eval_dir = dir.path().join("eval");
    ok(&["eval", "--checkpoint", p(&train_dir.join("model.ckpt")), "--data", &data, "--video-only", "--out", p(&eval_dir)]);
    let m_dir = dir.path().join("m");
    ok(&["metrics", p(&eval_dir.join("predictions")), p(&eval_dir.join("truth")), "--out", p(&m_dir)]);
    assert_eq!(fs::read(eval_dir.join("summary.md")).unwrap(), fs::read(m_dir.join("summary.md")).unwrap());
    // six held-out frames, four foreground classes each
    let csv = fs::read_to_string(m_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 4, "{csv}");
}

#[test]
fn ablate_writes_every_requested_row() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = tiny_setup(dir.path());
    let out = dir.path().join("abl");
    ok(&["ablate", "--config", &cfg, "--data", &data, "--epochs", "1", "--configs", "imageonly,VocSegMRI", "--seeds", "1", "--folds", "0,2", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let md = fs::read_to_string(out.join("ablation.md")).unwrap();
    assert!(md.contains("ImageOnly") && md.contains("VocSegMRI"));
}

#[test]
fn verify_losses_passes() {
    let out = ok(&["verify", "losses"]);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}
