use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::data::prepare_samples;
use super::evaluate::evaluate;
use super::train::train;
use super::{HarnessError, TrainConfig};
use crate::metrics::{BoxStats, DatasetReport, Stat};
use crate::model::{FusionMode, ModelConfig, VocSegModel};
use crate::synthdata::{mix_seed, split_loso, Dataset, MultimodalSample};

/// One row of the ablation grid: a fusion mode with or without the
/// contrastive objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationConfig {
    ImageOnly,
    ConcatVA,
    ConcatVP,
    ConcatVAP,
    CrossAtt,
    Contrastive,
    VocSegMRI,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 7] = [
        Self::ImageOnly,
        Self::ConcatVA,
        Self::ConcatVP,
        Self::ConcatVAP,
        Self::CrossAtt,
        Self::Contrastive,
        Self::VocSegMRI,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ImageOnly => "ImageOnly",
            Self::ConcatVA => "ConcatVA",
            Self::ConcatVP => "ConcatVP",
            Self::ConcatVAP => "ConcatVAP",
            Self::CrossAtt => "CrossAtt",
            Self::Contrastive => "Contrastive",
            Self::VocSegMRI => "VocSegMRI",
        }
    }

    pub fn fusion_mode(self) -> FusionMode {
        match self {
            Self::ImageOnly => FusionMode::ImageOnly,
            Self::ConcatVA => FusionMode::ConcatVA,
            Self::ConcatVP => FusionMode::ConcatVP,
            Self::ConcatVAP | Self::Contrastive => FusionMode::ConcatVAP,
            Self::CrossAtt | Self::VocSegMRI => FusionMode::CrossAttention,
        }
    }

    pub fn contrastive(self) -> bool {
        matches!(self, Self::Contrastive | Self::VocSegMRI)
    }
}

impl FromStr for AblationConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown ablation config {s:?}; expected one of {}", Self::ALL.map(|c| c.name()).join(", ")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub configs: Vec<AblationConfig>,
    pub seeds: Vec<u64>,
    /// Held-out speakers; empty means every speaker.
    pub folds: Vec<u32>,
    pub threads: usize,
}

/// Test-set result of one (config, fold, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: AblationConfig,
    pub held_out: u32,
    pub seed: u64,
    pub iou: f64,
    pub dice: f64,
    pub assd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
    /// Per foreground class, the defined per-frame Dice values.
    pub class_dice: Vec<Vec<f64>>,
    /// Per foreground class, the defined per-frame HD95 values.
    pub class_hd95: Vec<Vec<f64>>,
}

fn class_mean(report: &DatasetReport, get: impl Fn(&crate::metrics::ClassSummary) -> &Stat) -> Option<f64> {
    let v: Vec<f64> = report.classes.iter().filter_map(|c| get(c).mean).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl RunResult {
    fn from_report(config: AblationConfig, held_out: u32, seed: u64, report: &DatasetReport) -> Self {
        let n = report.classes.len();
        let mut class_dice = vec![Vec::new(); n];
        let mut class_hd95 = vec![Vec::new(); n];
        for frame in &report.frames {
            for (i, m) in frame.iter().enumerate() {
                if let Some(d) = m.dice {
                    class_dice[i].push(d);
                }
                if let Some(h) = m.hd95_mm {
                    class_hd95[i].push(h);
                }
            }
        }
        Self {
            config,
            held_out,
            seed,
            iou: class_mean(report, |c| &c.iou).unwrap_or(0.0),
            dice: class_mean(report, |c| &c.dice).unwrap_or(0.0),
            assd_mm: class_mean(report, |c| &c.assd_mm),
            hd95_mm: class_mean(report, |c| &c.hd95_mm),
            epochs: 0,
            best_epoch: None,
            best_val_dice: None,
            class_dice,
            class_hd95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub runs: usize,
    pub iou: Stat,
    pub dice: Stat,
    pub assd_mm: Stat,
    pub hd95_mm: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub class_names: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunResult>,
}

fn cell(s: &Stat, digits: usize) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{m:.digits$} ± {d:.digits$}"),
        _ => "n/a".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

impl AblationReport {
    pub fn row(&self, config: AblationConfig) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    /// Per-frame Dice and HD95 values of one foreground class (1-based),
    /// pooled over every run of `config`.
    pub fn class_values(&self, config: AblationConfig, class: u8) -> (Vec<f64>, Vec<f64>) {
        let i = class as usize - 1;
        let mut dice = Vec::new();
        let mut hd95 = Vec::new();
        for r in self.runs.iter().filter(|r| r.config == config) {
            dice.extend_from_slice(&r.class_dice[i]);
            hd95.extend_from_slice(&r.class_hd95[i]);
        }
        (dice, hd95)
    }

    /// Per config and foreground class: median and interquartile range of
    /// per-frame Dice and HD95, pooled over runs.
    pub fn class_markdown(&self) -> String {
        let mut s = String::from("| Model | Class | Dice median | Dice IQR | HD95 median (mm) | HD95 IQR (mm) |\n|---|---|--:|--:|--:|--:|\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"));
        for r in &self.rows {
            for (i, name) in self.class_names.iter().enumerate().skip(1) {
                let (dice, hd) = self.class_values(r.config, i as u8);
                let (d, h) = (BoxStats::of(&dice), BoxStats::of(&hd));
                let _ = writeln!(
                    s,
                    "| {} | {name} | {} | {} | {} | {} |",
                    r.config.name(),
                    fmt(d.map(|b| b.median)),
                    fmt(d.map(|b| b.q3 - b.q1)),
                    fmt(h.map(|b| b.median)),
                    fmt(h.map(|b| b.q3 - b.q1)),
                );
            }
        }
        s
    }

    /// One line per run.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,held_out,seed,iou,dice,assd_mm,hd95_mm,epochs,best_epoch,best_val_dice\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{},{},{},{},{}",
                r.config.name(),
                r.held_out,
                r.seed,
                r.iou,
                r.dice,
                opt(r.assd_mm),
                opt(r.hd95_mm),
                r.epochs,
                r.best_epoch.map_or_else(|| "NA".into(), |e| e.to_string()),
                opt(r.best_val_dice),
            );
        }
        s
    }

    /// Summary table: mean ± std across runs of the per-run class-averaged
    /// test metrics.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Model | Image | Audio | Phono | Contrastive | Runs | IoU | Dice | ASSD (mm) | HD95 (mm) |\n");
        s.push_str("|---|:-:|:-:|:-:|:-:|--:|--:|--:|--:|--:|\n");
        let tick = |b: bool| if b { "✓" } else { "" };
        for r in &self.rows {
            let m = r.config.fusion_mode();
            let _ = writeln!(
                s,
                "| {} | ✓ | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.config.name(),
                tick(m.uses_audio()),
                tick(m.uses_phono()),
                tick(r.config.contrastive()),
                r.runs,
                cell(&r.iou, 4),
                cell(&r.dice, 4),
                cell(&r.assd_mm, 3),
                cell(&r.hd95_mm, 3),
            );
        }
        s
    }
}

struct Job {
    config: AblationConfig,
    fold: usize,
    seed: u64,
}

struct FoldData {
    held_out: u32,
    train: Vec<MultimodalSample>,
    validation: Vec<MultimodalSample>,
    test: Vec<MultimodalSample>,
}

/// Trains and tests every (config, fold, seed) combination. Models for the
/// same fold and seed share their initialisation and batch order across
/// configs. `progress` sees each run as it finishes; the report lists runs
/// in grid order regardless of `threads`.
pub fn run_ablation(dataset: &Dataset, spec: &AblationSpec, progress: impl Fn(&RunResult) + Sync) -> Result<AblationReport, HarnessError> {
    spec.model.validate()?;
    spec.train.validate(spec.model.n_encoder_layers)?;
    if spec.configs.is_empty() || spec.seeds.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one config and one seed".into()));
    }
    let folds_ids = if spec.folds.is_empty() { dataset.speakers() } else { spec.folds.clone() };
    let size = spec.model.image_size;
    let folds = folds_ids
        .iter()
        .map(|&h| {
            let f = split_loso(dataset, h)?;
            Ok(FoldData {
                held_out: h,
                train: prepare_samples(dataset, &f.train, size),
                validation: prepare_samples(dataset, &f.validation, size),
                test: prepare_samples(dataset, &f.test, size),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let class_names: Vec<String> = dataset.manifest.class_names.clone();
    let names: Vec<&str> = class_names.iter().map(String::as_str).collect();

    let mut jobs = Vec::new();
    for fold in 0..folds.len() {
        for &seed in &spec.seeds {
            for &config in &spec.configs {
                jobs.push(Job { config, fold, seed });
            }
        }
    }
    let run = |job: &Job| -> Result<RunResult, HarnessError> {
        let fd = &folds[job.fold];
        let run_seed = mix_seed(&[job.seed, fd.held_out as u64]);
        let mut mcfg = spec.model.clone();
        mcfg.fusion_mode = job.config.fusion_mode();
        let mut model = VocSegModel::<f32>::new(mcfg, run_seed)?;
        let mut tcfg = spec.train.clone();
        tcfg.seed = run_seed;
        tcfg.use_contrastive = job.config.contrastive();
        let outcome = train(&mut model, &fd.train, &fd.validation, &tcfg, &names, None)?;
        let eval = evaluate(&model, &fd.test, false, &names)?;
        let mut r = RunResult::from_report(job.config, fd.held_out, job.seed, &eval.report);
        r.epochs = outcome.history.len();
        r.best_epoch = outcome.best_epoch;
        r.best_val_dice = outcome.best_val_dice;
        Ok(r)
    };

    let slots: Vec<Mutex<Option<Result<RunResult, HarnessError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(job) = jobs.get(i) else { break };
        let r = run(job);
        if let Ok(r) = &r {
            progress(r);
        }
        let failed = r.is_err();
        *slots[i].lock().expect("result slot") = Some(r);
        if failed {
            next.store(jobs.len(), Ordering::SeqCst);
        }
    };
    std::thread::scope(|s| {
        for _ in 1..spec.threads.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    let mut runs = Vec::with_capacity(jobs.len());
    for slot in slots {
        match slot.into_inner().expect("result slot") {
            Some(r) => runs.push(r?),
            None => continue,
        }
    }
    let rows = spec
        .configs
        .iter()
        .map(|&config| {
            let rs: Vec<&RunResult> = runs.iter().filter(|r| r.config == config).collect();
            AblationRow {
                config,
                runs: rs.len(),
                iou: Stat::of(rs.iter().map(|r| Some(r.iou))),
                dice: Stat::of(rs.iter().map(|r| Some(r.dice))),
                assd_mm: Stat::of(rs.iter().map(|r| r.assd_mm)),
                hd95_mm: Stat::of(rs.iter().map(|r| r.hd95_mm)),
            }
        })
        .collect();
    Ok(AblationReport { class_names, rows, runs })
}
