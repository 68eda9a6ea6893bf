//! Loss oracles: analytic anchors and a finite-difference check of the full
//! composite objective through the network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::GradCheck;
use crate::metrics::LabelMask;
use crate::model::{FusionMode, ModalityMask, ModelConfig, ModelInput, VocSegModel};
use crate::numcore::{Tape, Tensor};
use crate::objectives::{contrastive_global, cross_entropy, info_nce, soft_dice_loss, total_loss, ContrastiveConfig, LossError, LossWeights, DICE_EPS};

/// Named analytic identity with its observed error.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub name: &'static str,
    pub expected: f64,
    pub actual: f64,
}

impl Anchor {
    pub fn abs_err(&self) -> f64 {
        (self.expected - self.actual).abs()
    }
}

fn unit_rows(rows: &[Vec<f64>]) -> Tensor<f64> {
    let k = rows[0].len();
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(move |v| v / n)
        })
        .collect();
    Tensor::new(&[rows.len(), k], data).expect("consistent rows")
}

/// Closed-form values the loss implementations must reproduce.
pub fn loss_anchors() -> Result<Vec<Anchor>, LossError> {
    let mut out = Vec::new();
    let tau = 0.07;

    for b in [2usize, 4, 8] {
        let same = unit_rows(&vec![vec![0.3, -0.2, 0.9, 0.1]; b]);
        let mut t = Tape::<f64>::new();
        let x = t.constant(same.clone());
        let y = t.constant(same);
        let v = info_nce(&mut t, x, y, tau)?;
        out.push(Anchor {
            name: "identical embeddings give ln B per direction",
            expected: (b as f64).ln(),
            actual: t.value(v).item(),
        });
    }

    let same = unit_rows(&vec![vec![0.5, 0.5, -0.1]; 4]);
    let mut t = Tape::<f64>::new();
    let x = t.constant(same.clone());
    let v = contrastive_global(&mut t, x, x, x, tau)?;
    out.push(Anchor {
        name: "global on identical embeddings, B=4",
        expected: 4.0 * 4f64.ln(),
        actual: t.value(v).item(),
    });

    let mask = LabelMask::new(4, 3, (0..12).map(|i| (i % 5) as u8).collect(), 1.0).expect("valid");
    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::zeros(&[5, 3, 4]));
    let v = cross_entropy(&mut t, z, std::slice::from_ref(&mask))?;
    out.push(Anchor {
        name: "uniform logits give CE = ln C",
        expected: 5f64.ln(),
        actual: t.value(v).item(),
    });

    let aligned = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut t = Tape::<f64>::new();
    let a = t.constant(aligned.clone());
    let b = t.constant(aligned);
    let v = info_nce(&mut t, a, b, tau)?;
    out.push(Anchor {
        name: "aligned orthogonal pairs at B=2",
        expected: (1.0 + (-1.0 / tau).exp()).ln(),
        actual: t.value(v).item(),
    });
    let g = contrastive_global(&mut t, a, b, b, tau)?;
    out.push(Anchor {
        name: "global sums four directions",
        expected: 4.0 * (1.0 + (-1.0 / tau).exp()).ln(),
        actual: t.value(g).item(),
    });

    // Dice on one-hot probabilities.
    let truth = LabelMask::new(3, 2, vec![0, 1, 1, 2, 0, 2], 1.0).expect("valid");
    let onehot = |m: &LabelMask| {
        let mut d = vec![0.0; 3 * 6];
        for (px, &v) in m.values().iter().enumerate() {
            d[v as usize * 6 + px] = 1.0;
        }
        Tensor::new(&[3, 2, 3], d).expect("shape")
    };
    let mut t = Tape::<f64>::new();
    let p = t.constant(onehot(&truth));
    let v = soft_dice_loss(&mut t, p, std::slice::from_ref(&truth), DICE_EPS)?;
    out.push(Anchor {
        name: "Dice of the truth itself",
        expected: 0.0,
        actual: t.value(v).item(),
    });
    let disjoint = LabelMask::new(3, 2, vec![2, 0, 0, 1, 1, 1], 1.0).expect("valid");
    let p = t.constant(onehot(&disjoint));
    let v = soft_dice_loss(&mut t, p, std::slice::from_ref(&truth), DICE_EPS)?;
    out.push(Anchor {
        name: "Dice of a disjoint prediction",
        expected: 1.0,
        actual: t.value(v).item(),
    });
    Ok(out)
}

/// A deliberately tiny network for 64-bit gradient checks.
pub fn toy_config(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 4,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        n_audio_features: 3,
        n_phono_classes: 4,
        n_seg_classes: 3,
        projection_dim: 4,
        fusion_mode: mode,
        ..ModelConfig::default()
    }
}

/// Random two-frame batch matching `cfg`, with its masks.
pub fn toy_batch(cfg: &ModelConfig, batch: usize, audio_frames: usize, seed: u64) -> (ModelInput, Vec<LabelMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.image_size;
    let images: Vec<f32> = (0..batch * s * s).map(|_| rng.random_range(0.0..1.0)).collect();
    let audio: Vec<f32> = (0..batch * audio_frames * cfg.n_audio_features).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phono: Vec<f32> = (0..batch * cfg.n_phono_classes).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let masks = (0..batch)
        .map(|_| {
            let v = (0..s * s).map(|_| rng.random_range(0..cfg.n_seg_classes as u8)).collect();
            LabelMask::new(s, s, v, 1.0).expect("valid")
        })
        .collect();
    let input = ModelInput {
        images: Tensor::new(&[batch, 1, s, s], images).expect("shape"),
        audio: Some(Tensor::new(&[batch, audio_frames, cfg.n_audio_features], audio).expect("shape")),
        phono: Some(Tensor::new(&[batch, cfg.n_phono_classes], phono).expect("shape")),
    };
    (input, masks)
}

fn composite_value(model: &VocSegModel<f64>, input: &ModelInput, masks: &[LabelMask], modality: &[ModalityMask], w: &LossWeights) -> Result<f64, LossError> {
    let mut ctx = model.ctx();
    let out = model.forward(&mut ctx, input, Some(modality), w.w_contrastive > 0.0)?;
    let l = total_loss(model, &mut ctx, &out, masks, w, &ContrastiveConfig::default())?;
    Ok(ctx.tape.value(l.total).item())
}

/// Finite-difference check of `w_ce·CE + w_dice·Dice + w_con·(global +
/// local)` with respect to a sample of entries from every trainable
/// parameter, on a 2-frame batch in 64-bit precision.
pub fn composite_gradient_check(mode: FusionMode, seed: u64, h: f64) -> Result<GradCheck, LossError> {
    let cfg = toy_config(mode);
    let mut model: VocSegModel<f64> = VocSegModel::new(cfg.clone(), seed)?;
    let (input, masks) = toy_batch(&cfg, 2, 2, seed ^ 0x5eed);
    // frame 1 loses its audio so placeholders are exercised too
    let modality = [ModalityMask::ALL, ModalityMask { audio: false, phono: true }];
    let weights = LossWeights {
        w_ce: 1.0,
        w_dice: 1.0,
        w_contrastive: 0.5,
    };

    let mut ctx = model.ctx();
    let out = model.forward(&mut ctx, &input, Some(&modality), true)?;
    let l = total_loss(&model, &mut ctx, &out, &masks, &weights, &ContrastiveConfig::default())?;
    ctx.tape.backward(l.total)?;
    let grads = ctx.param_grads();
    drop(ctx);

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut report = GradCheck::default();
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for (idx, id) in ids.into_iter().enumerate() {
        let Some(g) = &grads[idx] else { continue };
        let n = g.len();
        for _ in 0..n.min(3) {
            let e = rng.random_range(0..n);
            let orig = model.params.get(id).value.data()[e];
            model.params.get_mut(id).value.data_mut()[e] = orig + h;
            let up = composite_value(&model, &input, &masks, &modality, &weights)?;
            model.params.get_mut(id).value.data_mut()[e] = orig - h;
            let down = composite_value(&model, &input, &masks, &modality, &weights)?;
            model.params.get_mut(id).value.data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            report.record(g[e], numeric);
        }
    }
    Ok(report)
}
