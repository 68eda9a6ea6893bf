use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::surface::{assd, extract_surface, hd95};
use super::{overlap_metrics, ClassMetrics, LabelMask, MetricsError};

/// Mean and population standard deviation over the defined values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub undefined: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let (mean, std) = match mean_std(&defined) {
            Some((m, s)) => (Some(m), Some(s)),
            None => (None, None),
        };
        Self {
            mean,
            std,
            n: defined.len(),
            undefined,
        }
    }

    fn cell(&self, digits: usize) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
            _ => "n/a".into(),
        }
    }
}

/// Mean and population standard deviation; `None` for empty input.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(super::percentile(&v, q))
}

/// Five-number summary for box plots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            min: quantile(values, 0.0)?,
            q1: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q3: quantile(values, 0.75)?,
            max: quantile(values, 1.0)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: u8,
    pub name: String,
    pub iou: Stat,
    pub dice: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub assd_mm: Stat,
    pub hd95_mm: Stat,
    pub dice_box: Option<BoxStats>,
    pub hd95_box: Option<BoxStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    /// Per frame, one entry per foreground class.
    pub frames: Vec<Vec<ClassMetrics>>,
    pub classes: Vec<ClassSummary>,
}

impl DatasetReport {
    /// Mean Dice across foreground classes (classes with no defined value
    /// are skipped).
    pub fn mean_foreground_dice(&self) -> f64 {
        let means: Vec<f64> = self.classes.iter().filter_map(|c| c.dice.mean).collect();
        means.iter().sum::<f64>() / means.len().max(1) as f64
    }

    pub fn class(&self, class: u8) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// All metrics for every foreground class `1..n_classes` of one frame.
pub fn evaluate_frame(pred: &LabelMask, truth: &LabelMask, n_classes: usize) -> Result<Vec<ClassMetrics>, MetricsError> {
    pred.same_dims(truth)?;
    if pred.spacing_mm() != truth.spacing_mm() {
        return Err(MetricsError::InvalidMask("prediction and truth spacing differ".into()));
    }
    pred.check_classes(n_classes)?;
    truth.check_classes(n_classes)?;
    (1..n_classes as u8)
        .map(|class| {
            let o = overlap_metrics(pred, truth, class)?;
            let sp = extract_surface(pred, class);
            let st = extract_surface(truth, class);
            Ok(ClassMetrics {
                class,
                iou: o.iou,
                dice: o.dice,
                precision: o.precision,
                recall: o.recall,
                assd_mm: assd(&sp, &st)?,
                hd95_mm: hd95(&sp, &st)?,
                support_pixels: o.true_pos + o.false_neg,
                predicted_pixels: o.true_pos + o.false_pos,
            })
        })
        .collect()
}

/// Evaluates paired masks; `class_names[0]` is the background.
pub fn evaluate_dataset(preds: &[LabelMask], truths: &[LabelMask], class_names: &[&str]) -> Result<DatasetReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), truths.len()));
    }
    let n_classes = class_names.len();
    let frames = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| evaluate_frame(p, t, n_classes))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = (1..n_classes)
        .map(|ci| {
            let col = |f: fn(&ClassMetrics) -> Option<f64>| frames.iter().map(move |fr| f(&fr[ci - 1]));
            let dice: Vec<f64> = col(|m| m.dice).flatten().collect();
            let hd: Vec<f64> = col(|m| m.hd95_mm).flatten().collect();
            ClassSummary {
                class: ci as u8,
                name: class_names[ci].to_string(),
                iou: Stat::of(col(|m| m.iou)),
                dice: Stat::of(col(|m| m.dice)),
                precision: Stat::of(col(|m| m.precision)),
                recall: Stat::of(col(|m| m.recall)),
                assd_mm: Stat::of(col(|m| m.assd_mm)),
                hd95_mm: Stat::of(col(|m| m.hd95_mm)),
                dice_box: BoxStats::of(&dice),
                hd95_box: BoxStats::of(&hd),
            }
        })
        .collect();
    Ok(DatasetReport { frames, classes })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// One row per (frame, class).
pub fn write_frame_csv<W: Write>(report: &DatasetReport, frame_ids: &[String], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "frame,class,iou,dice,precision,recall,assd_mm,hd95_mm,support_pixels,predicted_pixels")?;
    for (i, frame) in report.frames.iter().enumerate() {
        let id = frame_ids.get(i).cloned().unwrap_or_else(|| i.to_string());
        for m in frame {
            writeln!(
                out,
                "{id},{},{},{},{},{},{},{},{},{}",
                m.class,
                opt(m.iou),
                opt(m.dice),
                opt(m.precision),
                opt(m.recall),
                opt(m.assd_mm),
                opt(m.hd95_mm),
                m.support_pixels,
                m.predicted_pixels
            )?;
        }
    }
    Ok(())
}

/// Per-class mean ± std table in markdown.
pub fn write_summary_markdown(report: &DatasetReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Class | IoU | Dice | Precision | Recall | ASSD (mm) | HD95 (mm) | undefined HD95 |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for c in &report.classes {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            c.name,
            c.iou.cell(3),
            c.dice.cell(3),
            c.precision.cell(3),
            c.recall.cell(3),
            c.assd_mm.cell(2),
            c.hd95_mm.cell(2),
            c.hd95_mm.undefined
        );
    }
    s
}
