use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::make_batch;
use super::evaluate::evaluate;
use super::optim::{AdamW, EarlyStopping};
use super::{HarnessError, TrainConfig, UnfreezeStep};
use crate::model::{ModalityMask, VocSegModel, AUDIO_PREFIX, IMAGE_PREFIX};
use crate::objectives::{total_loss, LossBreakdown};
use crate::synthdata::{mix_seed, MultimodalSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub trainable_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
    pub steps: usize,
    pub stopped_early: bool,
    /// Audio-encoder fingerprint, identical before and after training.
    pub audio_fingerprint: String,
}

/// Sets image-encoder trainability for `epoch`: everything listed in the
/// schedule up to and including `epoch` is trainable, the rest is frozen.
pub fn apply_unfreeze(model: &mut VocSegModel<f32>, epoch: usize, schedule: &[UnfreezeStep]) {
    let n = model.n_image_blocks();
    model.params.set_trainable(IMAGE_PREFIX, false);
    for s in schedule.iter().filter(|s| s.epoch <= epoch) {
        model.params.set_trainable(&format!("{IMAGE_PREFIX}block{}.", s.block), true);
        if s.block == 0 {
            model.params.set_trainable(&format!("{IMAGE_PREFIX}patch."), true);
            model.params.set_trainable(&format!("{IMAGE_PREFIX}pos"), true);
        }
        if s.block + 1 == n {
            model.params.set_trainable(&format!("{IMAGE_PREFIX}norm."), true);
        }
    }
}

fn trainable_count(model: &VocSegModel<f32>) -> usize {
    model.params.iter().filter(|(_, p)| p.trainable && !p.frozen).map(|(_, p)| p.value.numel()).sum()
}

/// Trains in place and leaves the best-validation parameters in `model`.
/// Step losses go to `log` as CSV when given.
pub fn train(
    model: &mut VocSegModel<f32>,
    train_set: &[MultimodalSample],
    val_set: &[MultimodalSample],
    cfg: &TrainConfig,
    class_names: &[&str],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate(model.n_image_blocks())?;
    if train_set.is_empty() {
        return Err(HarnessError::EmptyPartition("training"));
    }
    if val_set.is_empty() {
        return Err(HarnessError::EmptyPartition("validation"));
    }
    let weights = cfg.effective_loss();
    let need_aux = weights.w_contrastive > 0.0;
    let dropout_p = model.config().modality_dropout_p;
    let fingerprint = model.params.fingerprint(AUDIO_PREFIX);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x7ea1]));
    let mut opt = AdamW::new(cfg.adamw);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = None;
    let mut history = Vec::new();
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", LossBreakdown::CSV_HEADER)?;
    }

    for epoch in 0..cfg.max_epochs {
        apply_unfreeze(model, epoch, &cfg.unfreeze_schedule);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&MultimodalSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (input, masks) = make_batch(&refs);
            let modality: Vec<ModalityMask> = chunk.iter().map(|_| ModalityMask::sample(&mut rng, dropout_p)).collect();
            let grads = {
                let mut ctx = model.ctx();
                let out = model.forward(&mut ctx, &input, Some(&modality), need_aux)?;
                let parts = total_loss(model, &mut ctx, &out, &masks, &weights, &cfg.contrastive)?;
                let total = ctx.tape.value(parts.total).item() as f64;
                if !total.is_finite() {
                    return Err(HarnessError::NonFiniteGradient {
                        param: "loss".into(),
                        index: steps,
                    });
                }
                ctx.tape.backward(parts.total)?;
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", parts.csv_row(steps, total))?;
                }
                loss_sum += total;
                ctx.param_grads()
            };
            opt.step(&mut model.params, &grads, cfg.learning_rate)?;
            steps += 1;
            n_batches += 1;
        }
        let val_dice = evaluate(model, val_set, false, class_names)?.report.mean_foreground_dice();
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_dice,
            trainable_params: trainable_count(model),
        });
        if stopper.observe(epoch, val_dice) {
            best_params = Some(model.params.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    let after = model.params.fingerprint(AUDIO_PREFIX);
    if after != fingerprint {
        return Err(HarnessError::Config("audio encoder parameters changed during training".into()));
    }
    Ok(TrainOutcome {
        stopped_early: history.len() < cfg.max_epochs,
        history,
        best_epoch: stopper.best_epoch,
        best_val_dice: stopper.best,
        steps,
        audio_fingerprint: after,
    })
}
