use super::data::make_batch;
use super::HarnessError;
use crate::metrics::{evaluate_dataset, DatasetReport, LabelMask};
use crate::model::{argmax_masks, VocSegModel};
use crate::synthdata::MultimodalSample;

const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: DatasetReport,
    pub predictions: Vec<LabelMask>,
}

/// Argmax inference (ties to the lower class) and per-class metrics. With
/// `video_only`, audio and phonology are withheld and the model falls back
/// on its placeholder tokens.
pub fn evaluate(model: &VocSegModel<f32>, samples: &[MultimodalSample], video_only: bool, class_names: &[&str]) -> Result<EvalOutput, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyPartition("evaluation"));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&MultimodalSample> = chunk.iter().collect();
        let (mut input, _) = make_batch(&refs);
        if video_only {
            input = input.video_only();
        }
        let mut ctx = model.ctx();
        let out = model.forward(&mut ctx, &input, None, false)?;
        let logits = ctx.tape.value(out.logits);
        for (s, m) in chunk.iter().zip(argmax_masks(logits)) {
            predictions.push(LabelMask::new(s.mask.width(), s.mask.height(), m, s.mask.spacing_mm())?);
        }
    }
    let truths: Vec<LabelMask> = samples.iter().map(|s| s.mask.clone()).collect();
    let report = evaluate_dataset(&predictions, &truths, class_names)?;
    Ok(EvalOutput { report, predictions })
}
