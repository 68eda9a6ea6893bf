use serde::{Deserialize, Serialize};

use super::{LabelMask, MetricsError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// IoU, Dice, precision and recall of `class`. A class absent from both masks
/// scores IoU = Dice = 1; precision/recall are undefined when their
/// denominator is zero.
pub fn overlap_metrics(pred: &LabelMask, truth: &LabelMask, class: u8) -> Result<Overlap, MetricsError> {
    pred.same_dims(truth)?;
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let union = tp + fp + fnn;
    let (iou, dice) = if union == 0 {
        (Some(1.0), Some(1.0))
    } else {
        (ratio(tp, union), ratio(2 * tp, 2 * tp + fp + fnn))
    };
    Ok(Overlap {
        iou,
        dice,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fnn),
        true_pos: tp,
        false_pos: fp,
        false_neg: fnn,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Confusion {
    TrueNeg = 0,
    TruePos = 1,
    FalsePos = 2,
    FalseNeg = 3,
}

/// Per-pixel confusion coding for one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<Confusion>,
}

impl ConfusionMap {
    pub fn count(&self, c: Confusion) -> usize {
        self.codes.iter().filter(|&&x| x == c).count()
    }

    /// Codes as a u8 raster (TN 0, TP 1, FP 2, FN 3).
    pub fn to_u8(&self) -> Vec<u8> {
        self.codes.iter().map(|&c| c as u8).collect()
    }
}

pub fn fp_fn_map(pred: &LabelMask, truth: &LabelMask, class: u8) -> Result<ConfusionMap, MetricsError> {
    pred.same_dims(truth)?;
    let codes = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&p, &t)| match (p == class, t == class) {
            (true, true) => Confusion::TruePos,
            (true, false) => Confusion::FalsePos,
            (false, true) => Confusion::FalseNeg,
            (false, false) => Confusion::TrueNeg,
        })
        .collect();
    Ok(ConfusionMap {
        width: pred.width(),
        height: pred.height(),
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, v: &[u8]) -> LabelMask {
        LabelMask::new(w, h, v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = mask(3, 1, &[1, 1, 0]);
        let o = overlap_metrics(&a, &a, 1).unwrap();
        assert_eq!((o.iou, o.dice, o.precision, o.recall), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let b = mask(3, 1, &[0, 0, 1]);
        let o = overlap_metrics(&a, &b, 1).unwrap();
        assert_eq!((o.iou, o.dice, o.precision, o.recall), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn empty_class_conventions() {
        let a = mask(2, 1, &[0, 0]);
        let o = overlap_metrics(&a, &a, 3).unwrap();
        assert_eq!((o.iou, o.dice), (Some(1.0), Some(1.0)));
        assert_eq!((o.precision, o.recall), (None, None));
        let t = mask(2, 1, &[3, 0]);
        let o = overlap_metrics(&a, &t, 3).unwrap();
        assert_eq!((o.iou, o.precision, o.recall), (Some(0.0), None, Some(0.0)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = mask(2, 1, &[0, 0]);
        let b = mask(1, 2, &[0, 0]);
        assert!(overlap_metrics(&a, &b, 0).is_err());
        assert!(fp_fn_map(&a, &b, 0).is_err());
    }

    #[test]
    fn superset_prediction_has_no_false_negatives() {
        let truth = mask(4, 1, &[0, 1, 1, 0]);
        let pred = mask(4, 1, &[1, 1, 1, 0]);
        let m = fp_fn_map(&pred, &truth, 1).unwrap();
        assert_eq!(m.count(Confusion::FalseNeg), 0);
        assert!(m.count(Confusion::FalsePos) > 0);
        assert_eq!(overlap_metrics(&pred, &truth, 1).unwrap().recall, Some(1.0));
        let same = fp_fn_map(&truth, &truth, 1).unwrap();
        assert_eq!(same.count(Confusion::FalsePos) + same.count(Confusion::FalseNeg), 0);
    }

    #[test]
    fn table_row_consistency() {
        // IoU 0.91 implies Dice 2·0.91/1.91 = 0.95288, which rounds to 0.95.
        let dice: f64 = 2.0 * 0.91 / 1.91;
        assert!((dice - 0.95288).abs() < 1e-5);
        assert!((dice - 0.95_f64).abs() < 0.005);
    }
}
