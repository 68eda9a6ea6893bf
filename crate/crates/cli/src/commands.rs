use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use vocseg_core::harness::{self, AblationSpec, TrainOutcome};
use vocseg_core::metrics::{self, evaluate_dataset, fp_fn_map, read_mask_file, write_mask_file, LabelMask, CLASS_NAMES};
use vocseg_core::model::{load_checkpoint, save_checkpoint, FusionMode, VocSegModel};
use vocseg_core::synthdata::{generate_dataset, read_dataset, split_loso, write_dataset, Dataset, GeneratorConfig, MANIFEST_FILE};
use vocseg_core::verify;

use crate::config::RunConfigFile;

/// An input path that does not exist; reported with exit code 2.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no such input: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown fusion mode {s:?}; expected image_only, concat_va, concat_vp, concat_vap or cross_attention"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.join(MANIFEST_FILE).is_file() {
        return Err(MissingInput(path.join(MANIFEST_FILE)).into());
    }
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn data_path(cli: Option<PathBuf>, cfg: &RunConfigFile) -> Result<PathBuf> {
    cli.or_else(|| cfg.data.clone()).context("no dataset given; pass --data or set `data` in the config")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn class_names(ds: &Dataset) -> Vec<&str> {
    ds.manifest.class_names.iter().map(String::as_str).collect()
}

pub fn generate(cfg: &GeneratorConfig, out: &Path) -> Result<()> {
    let mut ds = generate_dataset(cfg)?;
    write_dataset(&mut ds, out).with_context(|| format!("writing dataset to {}", out.display()))?;
    let counts = ds.class_pixel_counts();
    let total: usize = counts.iter().sum();
    println!("samples: {}", ds.len());
    for (name, n) in ds.manifest.class_names.iter().zip(&counts) {
        println!("{name:>12}: {:.5}", *n as f64 / total.max(1) as f64);
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    held_out: u32,
    train_samples: usize,
    validation_samples: usize,
    outcome: &'a TrainOutcome,
}

pub fn train(cfg: &RunConfigFile, data: PathBuf, out: &Path, held_out: u32) -> Result<()> {
    let ds = load_dataset(&data)?;
    fs::create_dir_all(out)?;
    let mut resolved = cfg.clone();
    resolved.data = Some(data);
    resolved.save_resolved(out)?;
    let fold = split_loso(&ds, held_out)?;
    let size = cfg.model.image_size;
    let tr = harness::prepare_samples(&ds, &fold.train, size);
    let va = harness::prepare_samples(&ds, &fold.validation, size);
    let mut model = VocSegModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut log = BufWriter::new(File::create(out.join("train.log.csv"))?);
    let outcome = harness::train(&mut model, &tr, &va, &cfg.train, &class_names(&ds), Some(&mut log))?;
    log.flush()?;
    save_checkpoint(&out.join("model.ckpt"), &model)?;
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            held_out,
            train_samples: tr.len(),
            validation_samples: va.len(),
            outcome: &outcome,
        },
    )?;
    for e in &outcome.history {
        eprintln!("epoch {:>3}  loss {:.5}  val dice {:.4}", e.epoch, e.train_loss, e.val_dice);
    }
    println!(
        "best epoch {} val dice {:.4}; checkpoint {}",
        outcome.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
        outcome.best_val_dice.unwrap_or(f64::NAN),
        out.join("model.ckpt").display()
    );
    Ok(())
}

pub fn eval(checkpoint: &Path, data: PathBuf, out: &Path, held_out: u32, video_only: bool) -> Result<()> {
    if !checkpoint.is_file() {
        return Err(MissingInput(checkpoint.to_path_buf()).into());
    }
    let ds = load_dataset(&data)?;
    let model = load_checkpoint(checkpoint)?;
    let fold = split_loso(&ds, held_out)?;
    let test = harness::prepare_samples(&ds, &fold.test, model.config().image_size);
    let names = class_names(&ds);
    let res = harness::evaluate(&model, &test, video_only, &names)?;
    fs::create_dir_all(out)?;
    let ids: Vec<String> = test.iter().map(|s| format!("s{}f{}", s.speaker, s.frame)).collect();
    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    metrics::write_frame_csv(&res.report, &ids, &mut csv)?;
    csv.flush()?;
    let summary = metrics::write_summary_markdown(&res.report);
    fs::write(out.join("summary.md"), &summary)?;
    write_json(&out.join("report.json"), &res.report)?;
    let truths: Vec<LabelMask> = test.iter().map(|s| s.mask.clone()).collect();
    for (sub, masks) in [("predictions", &res.predictions), ("truth", &truths)] {
        fs::create_dir_all(out.join(sub))?;
        write_mask_file(&out.join(sub).join("masks.vstn"), masks, &names)?;
    }
    fs::create_dir_all(out.join("fpfn"))?;
    let codes = ["true_negative", "true_positive", "false_positive", "false_negative"];
    for (class, name) in names.iter().enumerate().skip(1) {
        let maps = res
            .predictions
            .iter()
            .zip(&truths)
            .map(|(p, t)| {
                let m = fp_fn_map(p, t, class as u8)?;
                LabelMask::new(p.width(), p.height(), m.to_u8(), p.spacing_mm())
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_mask_file(&out.join("fpfn").join(format!("{name}.vstn")), &maps, &codes)?;
    }
    print!("{summary}");
    println!("mean foreground Dice {:.4}{}", res.report.mean_foreground_dice(), if video_only { " (video only)" } else { "" });
    Ok(())
}

pub fn threads(requested: usize) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("VOCSEG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let n = if requested == 0 { cores } else { requested };
    cap.map_or(n, |c| n.min(c)).max(1)
}

pub fn ablate(cfg: &RunConfigFile, data: PathBuf, out: &Path) -> Result<()> {
    let ds = load_dataset(&data)?;
    if ds.manifest.speakers.len() < 3 {
        bail!("ablation needs at least 3 speakers; the dataset has {}", ds.manifest.speakers.len());
    }
    fs::create_dir_all(out)?;
    let mut resolved = cfg.clone();
    resolved.data = Some(data);
    resolved.save_resolved(out)?;
    let a = &cfg.ablation;
    let spec = AblationSpec {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        configs: a.configs.clone(),
        seeds: a.seeds.clone(),
        folds: a.folds.clone(),
        threads: threads(a.threads),
    };
    let report = harness::run_ablation(&ds, &spec, |r| {
        eprintln!(
            "{:>12} speaker {} seed {}: dice {:.4} hd95 {} ({} epochs)",
            r.config.name(),
            r.held_out,
            r.seed,
            r.dice,
            r.hd95_mm.map_or_else(|| "n/a".into(), |h| format!("{h:.3}")),
            r.epochs
        );
    })?;
    fs::write(out.join("ablation.csv"), report.to_csv())?;
    fs::write(out.join("ablation.md"), report.to_markdown())?;
    fs::write(out.join("classes.md"), report.class_markdown())?;
    write_json(&out.join("ablation.json"), &report)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn list_mask_files(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(MissingInput(dir.to_path_buf()).into());
    }
    let mut names = Vec::new();
    for e in fs::read_dir(dir)? {
        let name = e?.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".json") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn metrics_cmd(pred_dir: &Path, truth_dir: &Path, spacing: Option<f64>, out: &Path) -> Result<()> {
    let preds = list_mask_files(pred_dir)?;
    let truths = list_mask_files(truth_dir)?;
    let unmatched: Vec<&String> = preds.iter().filter(|n| !truths.contains(n)).chain(truths.iter().filter(|n| !preds.contains(n))).collect();
    if !unmatched.is_empty() {
        bail!("unmatched mask files: {}", unmatched.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
    }
    let (mut all_p, mut all_t, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    for file in &preds {
        let (p, _) = read_mask_file(&pred_dir.join(file))?;
        let (t, side) = read_mask_file(&truth_dir.join(file))?;
        if p.len() != t.len() {
            bail!("{file}: {} predicted vs {} reference masks", p.len(), t.len());
        }
        names = side.class_names.clone();
        let s = spacing.unwrap_or(side.spacing_mm);
        for (i, (p, t)) in p.into_iter().zip(t).enumerate() {
            all_p.push(p.with_spacing(s)?);
            all_t.push(t.with_spacing(s)?);
            ids.push(format!("{file}#{i}"));
        }
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = evaluate_dataset(&all_p, &all_t, &name_refs)?;
    fs::create_dir_all(out)?;
    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    metrics::write_frame_csv(&report, &ids, &mut csv)?;
    csv.flush()?;
    let summary = metrics::write_summary_markdown(&report);
    fs::write(out.join("summary.md"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Gradients,
    Metrics,
    Losses,
    All,
}

/// Runs oracle suites; returns whether every check passed.
pub fn verify_suites(suite: Suite) -> Result<bool> {
    let mut ok = true;
    let mut line = |pass: bool, text: String| {
        ok &= pass;
        println!("{} {text}", if pass { "PASS" } else { "FAIL" });
    };
    if matches!(suite, Suite::Gradients | Suite::All) {
        for case in verify::primitive_cases() {
            let g = case.run()?;
            line(g.max_rel_err < 1e-4, format!("gradient {:<22} max rel err {:.3e} ({} entries)", case.name, g.max_rel_err, g.checked));
        }
        for mode in FusionMode::ALL {
            let g = verify::composite_gradient_check(mode, 7, verify::FD_STEP)?;
            line(g.max_rel_err < 1e-3, format!("composite loss {mode:?} max rel err {:.3e} ({} entries)", g.max_rel_err, g.checked));
        }
    }
    if matches!(suite, Suite::Metrics | Suite::All) {
        let r = verify::metric_oracle(200, 32, 11);
        line(r.max_surface_err <= 1e-9, format!("ASSD/HD95 vs brute force: max err {:.3e} mm over {} comparisons", r.max_surface_err, r.comparisons));
        line(r.overlap_mismatches == 0, format!("overlap counts vs naive recount: {} mismatches", r.overlap_mismatches));
    }
    if matches!(suite, Suite::Losses | Suite::All) {
        for a in verify::loss_anchors()? {
            line(a.abs_err() < 1e-6, format!("{:<40} expected {:.9} got {:.9}", a.name, a.expected, a.actual));
        }
    }
    Ok(ok)
}

