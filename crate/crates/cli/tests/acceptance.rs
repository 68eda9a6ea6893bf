//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stderr so the verdict shows even when output is captured.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocseg_core::harness::{
    evaluate, prepare_samples, run_ablation, train, AblationConfig, AblationReport, AblationSpec, TrainConfig, UnfreezeStep,
};
use vocseg_core::metrics::{overlap_metrics, CLASS_NAMES};
use vocseg_core::model::{FusionMode, ModelConfig, VocSegModel, AUDIO_PREFIX};
use vocseg_core::synthdata::{generate_dataset, split_loso, GeneratorConfig};
use vocseg_core::verify;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

#[test]
fn criterion_1_gradient_checks() {
    let start = Instant::now();
    let mut worst_prim: (f64, &str) = (0.0, "");
    for case in verify::primitive_cases() {
        let g = case.run().unwrap();
        if g.max_rel_err >= worst_prim.0 {
            worst_prim = (g.max_rel_err, case.name);
        }
    }
    let mut worst_comp: (f64, FusionMode) = (0.0, FusionMode::ImageOnly);
    for mode in FusionMode::ALL {
        let g = verify::composite_gradient_check(mode, 5, verify::FD_STEP).unwrap();
        if g.max_rel_err >= worst_comp.0 {
            worst_comp = (g.max_rel_err, mode);
        }
    }
    let (fast, time) = within(start, Duration::from_secs(120));
    let pass = worst_prim.0 < 1e-4 && worst_comp.0 < 1e-3 && fast;
    verdict(
        1,
        pass,
        &format!(
            "primitive max rel err {:.2e} ({}), composite max rel err {:.2e} ({:?}), {time}",
            worst_prim.0, worst_prim.1, worst_comp.0, worst_comp.1
        ),
    );
}

#[test]
fn criterion_2_metric_oracle() {
    let start = Instant::now();
    let rep = verify::metric_oracle(200, 32, 2024);
    let (fast, time) = within(start, Duration::from_secs(60));
    let pass = rep.cases >= 200 && rep.max_surface_err <= 1e-9 && rep.overlap_mismatches == 0 && fast;
    verdict(
        2,
        pass,
        &format!(
            "{} mask pairs, {} class comparisons, max ASSD/HD95 deviation {:.1e} mm, {} overlap mismatches, {time}",
            rep.cases, rep.comparisons, rep.max_surface_err, rep.overlap_mismatches
        ),
    );
}

#[test]
fn criterion_3_analytic_anchors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identity_err: f64 = 0.0;
    for _ in 0..200 {
        let (w, h) = (rng.random_range(2..=32), rng.random_range(2..=32));
        let p = verify::random_label_mask(&mut rng, w, h, 4, 1.0);
        let t = verify::random_label_mask(&mut rng, w, h, 4, 1.0);
        for class in 1..4 {
            let o = overlap_metrics(&p, &t, class).unwrap();
            if let (Some(iou), Some(dice)) = (o.iou, o.dice) {
                identity_err = identity_err.max((dice - 2.0 * iou / (1.0 + iou)).abs());
            }
        }
    }
    let dice_at_091: f64 = 2.0 * 0.91 / 1.91;
    let mut ok = identity_err < 1e-12 && (dice_at_091 - 0.95).abs() < 0.005;
    let mut worst = format!("dice/iou identity err {identity_err:.1e}, IoU 0.91 -> Dice {dice_at_091:.4}");
    for a in verify::loss_anchors().unwrap() {
        let tol = if a.name.contains("Dice") { 1e-5 } else { 1e-6 };
        ok &= a.abs_err() < tol;
        worst.push_str(&format!("; {} err {:.1e}", a.name, a.abs_err()));
    }
    verdict(3, ok, &worst);
}

fn protocol_model() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 4,
        d_model: 16,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_layers: 1,
        projection_dim: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn criterion_4_protocol_contracts() {
    let ds = generate_dataset(&GeneratorConfig {
        n_speakers: 4,
        frames_per_speaker: 10,
        augmentations: 1,
        ..Default::default()
    })
    .unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    let mut seen = vec![0usize; ds.len()];
    let mut tested = vec![0usize; ds.speakers().len()];
    for sp in ds.speakers() {
        let f = split_loso(&ds, sp).unwrap();
        for &i in f.train.iter().chain(&f.validation).chain(&f.test) {
            seen[i] += 1;
        }
        let test_speakers: Vec<u32> = f.test.iter().map(|&i| ds.samples[i].speaker).collect();
        ok &= test_speakers.iter().all(|&s| s == sp);
        ok &= f.train.iter().chain(&f.validation).all(|&i| ds.samples[i].speaker != sp);
        ok &= f.test.iter().all(|&i| ds.samples[i].augmentation == 0);
        for &i in &f.test {
            tested[ds.samples[i].speaker as usize] += 1;
        }
    }
    let originals_tested_once = ds.samples.iter().enumerate().filter(|(_, s)| s.augmentation == 0).all(|(i, _)| seen[i] == ds.speakers().len());
    ok &= originals_tested_once && tested.iter().all(|&n| n == 10);
    notes.push(format!("LOSO folds disjoint and exhaustive: {}", ok));

    let fold = split_loso(&ds, 0).unwrap();
    let prep = |idx: &[usize]| prepare_samples(&ds, idx, 16);
    let (tr, va, te) = (prep(&fold.train), prep(&fold.validation), prep(&fold.test));
    let mut model = VocSegModel::<f32>::new(protocol_model(), 9).unwrap();
    let before = model.params.fingerprint(AUDIO_PREFIX);
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 4,
        max_epochs: 3,
        unfreeze_schedule: vec![UnfreezeStep { epoch: 1, block: 1 }, UnfreezeStep { epoch: 2, block: 0 }],
        ..TrainConfig::default()
    };
    let out = train(&mut model, &tr, &va, &cfg, &CLASS_NAMES, None).unwrap();
    let hash_ok = before == model.params.fingerprint(AUDIO_PREFIX) && out.audio_fingerprint == before;
    ok &= hash_ok;
    notes.push(format!("audio hash unchanged: {hash_ok}"));

    let patience = 3;
    let mut stale = VocSegModel::<f32>::new(protocol_model(), 10).unwrap();
    let stop_cfg = TrainConfig {
        learning_rate: 1e-12,
        patience,
        max_epochs: 50,
        ..cfg.clone()
    };
    let out = train(&mut stale, &tr, &va, &stop_cfg, &CLASS_NAMES, None).unwrap();
    let stop_ok = out.stopped_early && out.history.len() <= patience + 1;
    ok &= stop_ok;
    notes.push(format!("early stop after {} epochs at patience {patience}", out.history.len()));

    let vo = evaluate(&model, &te, true, &CLASS_NAMES).unwrap();
    let valid = vo.predictions.len() == te.len()
        && vo.predictions.iter().zip(&te).all(|(p, s)| p.width() == s.mask.width() && p.values().iter().all(|&v| v < 5));
    ok &= valid && vo.report.mean_foreground_dice().is_finite();
    notes.push(format!("video-only masks valid: {valid}"));
    verdict(4, ok, &notes.join(", "));
}

/// Toy dimensions and schedule used for the desk-scale ablation grid.
fn desk_spec() -> AblationSpec {
    AblationSpec {
        model: ModelConfig::default(),
        train: TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 14,
            patience: 5,
            unfreeze_schedule: vec![UnfreezeStep { epoch: 0, block: 1 }, UnfreezeStep { epoch: 1, block: 0 }],
            ..TrainConfig::default()
        },
        configs: vec![AblationConfig::ImageOnly, AblationConfig::ConcatVAP, AblationConfig::CrossAtt, AblationConfig::VocSegMRI],
        seeds: vec![1, 2, 3],
        folds: vec![],
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

fn desk_ablation() -> &'static (AblationReport, Duration) {
    static REPORT: OnceLock<(AblationReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let start = Instant::now();
        let ds = generate_dataset(&GeneratorConfig::default()).unwrap();
        let rep = run_ablation(&ds, &desk_spec(), |r| {
            let _ = writeln!(
                std::io::stderr(),
                "  {:>10} speaker {} seed {}: dice {:.4} ({} epochs)",
                r.config.name(),
                r.held_out,
                r.seed,
                r.dice,
                r.epochs
            );
        })
        .unwrap();
        (rep, start.elapsed())
    })
}

#[test]
fn criterion_5_ablation_ordering() {
    let (rep, elapsed) = desk_ablation();
    let mean = |c: AblationConfig| rep.row(c).and_then(|r| r.dice.mean).unwrap_or(f64::NAN);
    let hd = |c: AblationConfig| rep.row(c).and_then(|r| r.hd95_mm.mean).unwrap_or(f64::NAN);
    use AblationConfig::*;
    let chain = [VocSegMRI, CrossAtt, ConcatVAP, ImageOnly];
    let ordered = chain.windows(2).all(|w| mean(w[0]) + 0.005 >= mean(w[1]));
    let runs_ok = rep.runs.len() == chain.len() * 3 * 5;
    let pass = ordered && runs_ok && mean(VocSegMRI) >= 0.85 && hd(VocSegMRI) < hd(ImageOnly) && *elapsed < Duration::from_secs(7200);
    let dice: Vec<String> = chain.iter().map(|&c| format!("{} {:.4}", c.name(), mean(c))).collect();
    verdict(
        5,
        pass,
        &format!(
            "mean Dice {}; HD95 VocSegMRI {:.3} vs ImageOnly {:.3} mm; {} runs in {:.0}s",
            dice.join(" / "),
            hd(VocSegMRI),
            hd(ImageOnly),
            rep.runs.len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn iqr(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (s.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (x - lo as f64)
    };
    q(0.75) - q(0.25)
}

#[test]
fn criterion_6_hard_classes() {
    let (rep, _) = desk_ablation();
    let (tongue_d, tongue_h) = rep.class_values(AblationConfig::VocSegMRI, 1);
    let mut ok = true;
    let mut detail = format!("tongue median Dice {:.4}, HD95 IQR {:.3} mm", median(&tongue_d), iqr(&tongue_h));
    for (class, name) in [(3, "upper lip"), (4, "lower lip")] {
        let (d, h) = rep.class_values(AblationConfig::VocSegMRI, class);
        ok &= median(&d) < median(&tongue_d) && iqr(&h) > iqr(&tongue_h);
        detail.push_str(&format!("; {name} median Dice {:.4}, HD95 IQR {:.3} mm", median(&d), iqr(&h)));
    }
    verdict(6, ok, &detail);
}

const REPRO_CONFIG: &str = r#"{
  "model": {"image_size": 32, "patch_size": 8, "d_model": 32, "n_heads": 2,
            "n_encoder_layers": 2, "n_decoder_layers": 1, "projection_dim": 16},
  "train": {"learning_rate": 0.001, "max_epochs": 2}
}"#;

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_vocseg")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(root: &Path, cfg: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = root.join("data");
    run_cli(&["generate-data", "--speakers", "3", "--frames-per-speaker", "20", "--seed", "5", "--out", &s(&data)]);
    let tr = root.join("train");
    run_cli(&["train", "--config", &s(cfg), "--data", &s(&data), "--seed", "8", "--held-out", "2", "--out", &s(&tr)]);
    let ev = root.join("eval");
    run_cli(&["eval", "--checkpoint", &s(&tr.join("model.ckpt")), "--data", &s(&data), "--held-out", "2", "--out", &s(&ev)]);
    let mut files = Vec::new();
    for dir in [&data, &tr, &ev, &ev.join("predictions")] {
        let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            // the resolved config names the run directory
            if !rel.ends_with("resolved_config.json") {
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files
}

#[test]
fn criterion_7_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, REPRO_CONFIG).unwrap();
    let a = pipeline(&tmp.path().join("a"), &cfg);
    let b = pipeline(&tmp.path().join("b"), &cfg);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let has = |f: &str| names.iter().any(|n| n.ends_with(f));
    let pass = a.len() == b.len() && differing.is_empty() && has("model.ckpt") && has("report.json") && has("metrics.csv");
    verdict(7, pass, &format!("{} files compared across two runs, differing: {:?}", a.len(), differing));
}
