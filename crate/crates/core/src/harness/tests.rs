use super::*;
use crate::metrics::CLASS_NAMES;
use crate::model::{FusionMode, ModelConfig, VocSegModel, AUDIO_PREFIX};
use crate::synthdata::{generate_dataset, split_loso, GeneratorConfig};

fn small_model(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 4,
        d_model: 16,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_layers: 1,
        projection_dim: 8,
        fusion_mode: mode,
        ..ModelConfig::default()
    }
}

fn small_data() -> (Vec<crate::synthdata::MultimodalSample>, Vec<crate::synthdata::MultimodalSample>) {
    let ds = generate_dataset(&GeneratorConfig {
        n_speakers: 3,
        frames_per_speaker: 8,
        augmentations: 1,
        ..Default::default()
    })
    .unwrap();
    let f = split_loso(&ds, 0).unwrap();
    (prepare_samples(&ds, &f.train, 16), prepare_samples(&ds, &f.validation, 16))
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 4,
        max_epochs: epochs,
        unfreeze_schedule: vec![UnfreezeStep { epoch: 1, block: 1 }, UnfreezeStep { epoch: 2, block: 0 }],
        ..Default::default()
    }
}

#[test]
fn unfreeze_schedule_follows_epochs() {
    let mut m = VocSegModel::<f32>::new(small_model(FusionMode::CrossAttention), 1).unwrap();
    let trainable = |m: &VocSegModel<f32>, name: &str| m.params.iter().find(|(_, p)| p.name == name).unwrap().1.trainable;
    let sched = quick(1).unfreeze_schedule;
    apply_unfreeze(&mut m, 0, &sched);
    assert!(!trainable(&m, "image.block1.mlp.fc1.w") && !trainable(&m, "image.patch.w") && !trainable(&m, "image.norm.gain"));
    assert!(trainable(&m, "decoder.layer0.mlp.fc1.w"));
    apply_unfreeze(&mut m, 1, &sched);
    assert!(trainable(&m, "image.block1.mlp.fc1.w") && trainable(&m, "image.norm.gain"));
    assert!(!trainable(&m, "image.block0.mlp.fc1.w") && !trainable(&m, "image.pos"));
    apply_unfreeze(&mut m, 2, &sched);
    assert!(trainable(&m, "image.block0.mlp.fc1.w") && trainable(&m, "image.pos") && trainable(&m, "image.patch.b"));
    assert!(m.params.iter().filter(|(_, p)| p.name.starts_with(AUDIO_PREFIX)).all(|(_, p)| p.frozen));
}

#[test]
fn training_reduces_loss_and_keeps_audio_encoder() {
    let (tr, va) = small_data();
    let mut m = VocSegModel::<f32>::new(small_model(FusionMode::CrossAttention), 3).unwrap();
    let before = m.params.fingerprint(AUDIO_PREFIX);
    let mut log = Vec::new();
    let out = train(&mut m, &tr, &va, &quick(4), &CLASS_NAMES, Some(&mut log)).unwrap();
    assert_eq!(out.audio_fingerprint, before);
    assert_eq!(m.params.fingerprint(AUDIO_PREFIX), before);
    let h = &out.history;
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,ce,dice,con_global,con_local,total");
    assert_eq!(text.lines().count(), out.steps + 1);
    assert!(h.windows(2).all(|w| w[1].trainable_params >= w[0].trainable_params));
}

#[test]
fn early_stopping_halts_within_patience_plus_one() {
    let (tr, va) = small_data();
    let mut m = VocSegModel::<f32>::new(small_model(FusionMode::ImageOnly), 5).unwrap();
    // a tiny rate keeps validation Dice from improving after epoch 0
    let cfg = TrainConfig {
        learning_rate: 1e-12,
        patience: 2,
        ..quick(50)
    };
    let out = train(&mut m, &tr, &va, &cfg, &CLASS_NAMES, None).unwrap();
    let best = out.best_epoch.unwrap();
    assert!(out.history.len() <= best + cfg.patience + 1);
    assert!(out.stopped_early);
}

#[test]
fn disabled_contrastive_matches_zero_weight_bitwise() {
    let (tr, va) = small_data();
    let run = |cfg: TrainConfig| {
        let mut m = VocSegModel::<f32>::new(small_model(FusionMode::CrossAttention), 7).unwrap();
        train(&mut m, &tr, &va, &cfg, &CLASS_NAMES, None).unwrap();
        m.params.fingerprint("")
    };
    let off = TrainConfig {
        use_contrastive: false,
        ..quick(2)
    };
    let mut zero = quick(2);
    zero.loss.w_contrastive = 0.0;
    assert_eq!(run(off), run(zero));
}

#[test]
fn training_is_deterministic() {
    let (tr, va) = small_data();
    let run = || {
        let mut m = VocSegModel::<f32>::new(small_model(FusionMode::ConcatVAP), 9).unwrap();
        let o = train(&mut m, &tr, &va, &quick(2), &CLASS_NAMES, None).unwrap();
        (m.params.fingerprint(""), o)
    };
    assert_eq!(run(), run());
}

#[test]
fn video_only_evaluation_yields_valid_masks() {
    let (_, va) = small_data();
    for mode in FusionMode::ALL {
        let m = VocSegModel::<f32>::new(small_model(mode), 11).unwrap();
        let out = evaluate(&m, &va, true, &CLASS_NAMES).unwrap();
        assert_eq!(out.predictions.len(), va.len());
        for p in &out.predictions {
            assert_eq!((p.width(), p.height()), (16, 16));
            assert!(p.values().iter().all(|&v| (v as usize) < CLASS_NAMES.len()));
        }
    }
}

#[test]
fn empty_partitions_are_rejected() {
    let (tr, _) = small_data();
    let mut m = VocSegModel::<f32>::new(small_model(FusionMode::ImageOnly), 1).unwrap();
    assert!(matches!(train(&mut m, &tr, &[], &quick(1), &CLASS_NAMES, None), Err(HarnessError::EmptyPartition(_))));
    assert!(matches!(evaluate(&m, &[], false, &CLASS_NAMES), Err(HarnessError::EmptyPartition(_))));
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    assert!(c.validate(2).is_ok());
    assert!(c.validate(1).is_err());
    c.learning_rate = 0.0;
    assert!(c.validate(2).is_err());
    let c = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(c.validate(2).is_err());
}

#[test]
fn ablation_config_names_round_trip() {
    for c in AblationConfig::ALL {
        assert_eq!(c.name().to_lowercase().parse::<AblationConfig>().unwrap(), c);
    }
    assert!("nope".parse::<AblationConfig>().is_err());
    assert!(AblationConfig::VocSegMRI.contrastive() && !AblationConfig::CrossAtt.contrastive());
}

#[test]
fn tiny_ablation_runs_every_cell() {
    let ds = generate_dataset(&GeneratorConfig {
        n_speakers: 3,
        frames_per_speaker: 6,
        augmentations: 0,
        ..Default::default()
    })
    .unwrap();
    let spec = AblationSpec {
        model: small_model(FusionMode::CrossAttention),
        train: quick(1),
        configs: vec![AblationConfig::ImageOnly, AblationConfig::VocSegMRI],
        seeds: vec![1],
        folds: vec![],
        threads: 2,
    };
    let count = std::sync::atomic::AtomicUsize::new(0);
    let rep = run_ablation(&ds, &spec, |_| {
        count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    })
    .unwrap();
    assert_eq!(rep.runs.len(), 6);
    assert_eq!(count.into_inner(), 6);
    assert_eq!(rep.rows[0].runs, 3);
    assert!(rep.to_markdown().contains("| VocSegMRI |"));
    assert_eq!(rep.to_csv().lines().count(), 7);
    let single = AblationSpec { threads: 1, ..spec };
    assert_eq!(run_ablation(&ds, &single, |_| {}).unwrap(), rep);
}

/// Rectangles whose class is readable from their intensity.
fn trivial_samples(n: usize, size: usize, seed: u64) -> Vec<crate::synthdata::MultimodalSample> {
    use crate::metrics::LabelMask;
    use crate::numcore::Tensor;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut mask = vec![0u8; size * size];
            for class in 1..5u8 {
                let (r0, c0) = (rng.random_range(0..size - 4), rng.random_range(0..size - 4));
                let (h, w) = (rng.random_range(3..6), rng.random_range(3..6));
                for r in r0..(r0 + h).min(size) {
                    for c in c0..(c0 + w).min(size) {
                        mask[r * size + c] = class;
                    }
                }
            }
            let image: Vec<f32> = mask.iter().map(|&m| m as f32 * 0.2 + 0.1).collect();
            crate::synthdata::MultimodalSample {
                speaker: 0,
                frame: i as u32,
                augmentation: 0,
                image: Tensor::new(&[1, size, size], image).unwrap(),
                mask: LabelMask::new(size, size, mask, 1.0).unwrap(),
                audio: Tensor::zeros(&[4, 16]),
                phono: Tensor::zeros(&[12]),
            }
        })
        .collect()
}

fn all_unfrozen(epochs: usize) -> TrainConfig {
    TrainConfig {
        unfreeze_schedule: vec![UnfreezeStep { epoch: 0, block: 0 }, UnfreezeStep { epoch: 0, block: 1 }],
        ..quick(epochs)
    }
}

#[test]
fn trivially_learnable_set_reaches_high_training_dice() {
    let data = trivial_samples(50, 16, 1);
    let mc = ModelConfig {
        d_model: 32,
        patch_size: 2,
        ..small_model(FusionMode::ImageOnly)
    };
    let mut m = VocSegModel::<f32>::new(mc, 2).unwrap();
    let out = train(&mut m, &data, &data, &all_unfrozen(30), &CLASS_NAMES, None).unwrap();
    let dice = evaluate(&m, &data, false, &CLASS_NAMES).unwrap().report.mean_foreground_dice();
    assert!(dice >= 0.95, "training Dice {dice:.4} after {} epochs", out.history.len());
}

#[test]
fn full_batch_loss_mostly_decreases() {
    let (tr, _) = small_data();
    let data = &tr[..12];
    for mode in [FusionMode::ImageOnly, FusionMode::CrossAttention] {
        let mc = ModelConfig {
            modality_dropout_p: 0.0,
            ..small_model(mode)
        };
        let mut m = VocSegModel::<f32>::new(mc, 5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: data.len(),
            ..all_unfrozen(20)
        };
        let out = train(&mut m, data, data, &cfg, &CLASS_NAMES, None).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
        let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(down as f64 >= 0.9 * (losses.len() - 1) as f64, "{mode:?}: {losses:?}");
    }
}

#[test]
fn returned_model_scores_the_best_validation_dice() {
    let (tr, va) = small_data();
    let mut m = VocSegModel::<f32>::new(small_model(FusionMode::CrossAttention), 4).unwrap();
    let out = train(&mut m, &tr, &va, &all_unfrozen(6), &CLASS_NAMES, None).unwrap();
    let best = out.history.iter().map(|h| h.val_dice).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_dice, Some(best));
    assert_eq!(evaluate(&m, &va, false, &CLASS_NAMES).unwrap().report.mean_foreground_dice(), best);
}

#[test]
fn evaluation_reports_every_foreground_class() {
    let (_, va) = small_data();
    let m = VocSegModel::<f32>::new(small_model(FusionMode::ImageOnly), 6).unwrap();
    let a = evaluate(&m, &va, false, &CLASS_NAMES).unwrap();
    let b = evaluate(&m, &va, true, &CLASS_NAMES).unwrap();
    assert_eq!(a.report.classes.len(), CLASS_NAMES.len() - 1);
    assert_eq!(a.report, b.report);
    assert_eq!(a.predictions, b.predictions);
    for c in &a.report.classes {
        assert!(c.iou.n + c.iou.undefined == va.len() && c.dice.n + c.dice.undefined == va.len());
    }
}

#[test]
fn untrained_ablation_rows_are_indistinguishable() {
    let ds = generate_dataset(&GeneratorConfig {
        n_speakers: 3,
        frames_per_speaker: 6,
        augmentations: 0,
        ..Default::default()
    })
    .unwrap();
    let spec = AblationSpec {
        model: small_model(FusionMode::CrossAttention),
        train: quick(0),
        configs: AblationConfig::ALL.to_vec(),
        seeds: vec![1, 2],
        folds: vec![],
        threads: 1,
    };
    let rep = run_ablation(&ds, &spec, |_| {}).unwrap();
    assert_eq!(rep.rows.len(), 7);
    assert!(rep.runs.iter().all(|r| r.epochs == 0));
    for r in &rep.rows {
        let (m, s) = (r.dice.mean.unwrap(), r.dice.std.unwrap());
        assert!(m < 0.3, "{} untrained Dice {m}", r.config.name());
        assert!(s >= 0.0);
    }
    // configs sharing a fusion mode are identical without training
    assert_eq!(rep.row(AblationConfig::CrossAtt).unwrap().dice, rep.row(AblationConfig::VocSegMRI).unwrap().dice);
    let means: Vec<f64> = rep.rows.iter().map(|r| r.dice.mean.unwrap()).collect();
    let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
    let pooled_std = rep.rows.iter().map(|r| r.dice.std.unwrap()).fold(0.0, f64::max);
    assert!(spread <= 2.0 * pooled_std + 0.02, "spread {spread} vs std {pooled_std}");
}
