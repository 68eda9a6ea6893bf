use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{Tensor, Var};

fn cfg(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 4,
        d_model: 16,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_layers: 2,
        projection_dim: 8,
        fusion_mode: mode,
        ..ModelConfig::default()
    }
}

fn input(c: &ModelConfig, b: usize, t: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = c.image_size;
    let images = Tensor::new(&[b, 1, s, s], (0..b * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let audio = Tensor::new(&[b, t, c.n_audio_features], (0..b * t * c.n_audio_features).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let phono = Tensor::new(&[b, c.n_phono_classes], (0..b * c.n_phono_classes).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect()).unwrap();
    ModelInput {
        images,
        audio: Some(audio),
        phono: Some(phono),
    }
}

fn logits(m: &VocSegModel<f32>, x: &ModelInput, masks: Option<&[ModalityMask]>) -> Tensor<f32> {
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, x, masks, false).unwrap();
    ctx.tape.value(out.logits).clone()
}

fn row(t: &Tensor<f32>, r: usize) -> Vec<f32> {
    let w = t.shape()[1];
    t.data()[r * w..(r + 1) * w].to_vec()
}

#[test]
fn default_shapes() {
    let c = ModelConfig::default();
    let m = VocSegModel::<f32>::new(c.clone(), 0).unwrap();
    let x = input(&c, 2, 4, 1);
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, &x, None, true).unwrap();
    assert_eq!(ctx.tape.shape(out.logits), &[2, 5, 64, 64]);
    assert_eq!(ctx.tape.shape(out.image_tokens), &[2 * 64, 64]);
    assert_eq!(ctx.tape.shape(out.audio_tokens.unwrap()), &[2 * 4, 64]);
    assert_eq!(ctx.tape.shape(out.phono_tokens.unwrap()), &[2, 64]);
    let masks = argmax_masks(ctx.tape.value(out.logits));
    assert!(masks.iter().flatten().all(|&v| v < 5));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig { image_size: 30, ..cfg(FusionMode::ImageOnly) },
        ModelConfig { d_model: 15, ..cfg(FusionMode::ImageOnly) },
        ModelConfig { n_seg_classes: 1, ..cfg(FusionMode::ImageOnly) },
        ModelConfig { modality_dropout_p: 1.5, ..cfg(FusionMode::ImageOnly) },
    ];
    for c in bad {
        assert!(VocSegModel::<f32>::new(c, 0).is_err());
    }
}

#[test]
fn same_seed_same_model_and_output() {
    let c = cfg(FusionMode::CrossAttention);
    let a = VocSegModel::<f32>::new(c.clone(), 5).unwrap();
    let b = VocSegModel::<f32>::new(c.clone(), 5).unwrap();
    assert_eq!(a.params.fingerprint(""), b.params.fingerprint(""));
    let x = input(&c, 3, 4, 2);
    assert_eq!(logits(&a, &x, None), logits(&b, &x, None));
}

#[test]
fn identical_samples_give_identical_logits() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 1).unwrap();
    let one = input(&c, 1, 4, 3);
    let cat = |t: &Tensor<f32>| {
        let mut s = t.shape().to_vec();
        s[0] = 2;
        Tensor::new(&s, [t.data(), t.data()].concat()).unwrap()
    };
    let two = ModelInput {
        images: cat(&one.images),
        audio: one.audio.as_ref().map(cat),
        phono: one.phono.as_ref().map(cat),
    };
    let l = logits(&m, &two, None);
    let n = l.numel() / 2;
    assert_eq!(l.data()[..n], l.data()[n..]);
}

#[test]
fn without_positions_the_encoder_is_patch_permutation_equivariant() {
    let c = cfg(FusionMode::ImageOnly);
    let mut m = VocSegModel::<f32>::new(c.clone(), 2).unwrap();
    let pos = m.params.id("image.pos").unwrap();
    m.params.get_mut(pos).value = Tensor::zeros(&[c.n_patches(), c.d_model]);
    let x = input(&c, 1, 4, 4);
    // swap patch (0,0) with patch (2,3) in pixel space
    let (p, s) = (c.patch_size, c.image_size);
    let mut swapped = x.images.clone();
    for r in 0..p {
        for col in 0..p {
            let a = r * s + col;
            let b = (2 * p + r) * s + 3 * p + col;
            swapped.data_mut().swap(a, b);
        }
    }
    let tokens = |img: &Tensor<f32>| {
        let mut ctx = m.ctx();
        let v = m.encode_image(&mut ctx, img, &mut Vec::new()).unwrap();
        ctx.tape.value(v).clone()
    };
    let t0 = tokens(&x.images);
    let t1 = tokens(&swapped);
    let g = c.grid();
    let moved = 2 * g + 3;
    for (a, b) in [(0, moved), (moved, 0), (5, 5)] {
        for (u, v) in row(&t0, a).iter().zip(row(&t1, b)) {
            assert!((u - v).abs() < 1e-5);
        }
    }
}

#[test]
fn audio_window_becomes_one_token_per_frame() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 3).unwrap();
    let x = input(&c, 2, 4, 5);
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, &x, None, false).unwrap();
    let mem = out.memory.unwrap();
    assert_eq!(mem.counts, vec![5, 5]);
    assert_eq!(mem.kinds[0][..4], [TokenKind::Audio; 4]);
    assert_eq!(mem.kinds[0][4], TokenKind::Phono);
    let a = ctx.tape.value(out.audio_tokens.unwrap()).clone();
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(row(&a, i), row(&a, j));
        }
    }
}

#[test]
fn distinct_phono_vectors_give_distinct_tokens() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 4).unwrap();
    let k = c.n_phono_classes;
    let mut onehots = vec![0.0; k * k];
    for i in 0..k {
        onehots[i * k + i] = 1.0;
    }
    let mut ctx = m.ctx();
    let v = m.encode_phono(&mut ctx, &Tensor::new(&[k, k], onehots).unwrap()).unwrap();
    let t = ctx.tape.value(v).clone();
    for i in 0..k {
        for j in i + 1..k {
            assert_ne!(row(&t, i), row(&t, j));
        }
    }
}

#[test]
fn dropped_modalities_share_learned_nulls() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 6).unwrap();
    let x = input(&c, 3, 4, 7);
    let masks = [
        ModalityMask::NONE,
        ModalityMask { audio: true, phono: false },
        ModalityMask::NONE,
    ];
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, &x, Some(&masks), false).unwrap();
    let mem = out.memory.unwrap();
    assert_eq!(mem.counts, vec![2, 5, 2]);
    assert_eq!(mem.kinds[0], vec![TokenKind::Null, TokenKind::Null]);
    assert_eq!(mem.kinds[1][4], TokenKind::Null);
    let t = ctx.tape.value(mem.tokens).clone();
    let nulls = m.params.get(m.params.id("memory.null").unwrap()).value.clone();
    assert_eq!(row(&t, 0), row(&nulls, 0));
    assert_eq!(row(&t, 1), row(&nulls, 1));
    assert_eq!(row(&t, 6), row(&nulls, 1));
    assert_eq!(row(&t, 7), row(&t, 0));
    assert_eq!(row(&t, 8), row(&t, 1));
}

#[test]
fn single_memory_token_gets_all_attention() {
    let mut s = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let attn = MultiHeadAttention::new(&mut s, "a", 8, 2, false, &mut rng);
    let mut ctx = Ctx::new(&s);
    let x = ctx.tape.constant(Tensor::randn(&[6, 8], 1.0, &mut rng));
    let mem = ctx.tape.constant(Tensor::randn(&[2, 8], 1.0, &mut rng));
    let (_, w) = attn.cross_attend(&mut ctx, x, 2, mem, &[1, 1]).unwrap();
    assert!(ctx.tape.value(w[0]).data().iter().all(|&v| v == 1.0));
}

#[test]
fn attention_rows_sum_to_one() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 8).unwrap();
    let x = input(&c, 3, 4, 9);
    let masks = [ModalityMask::ALL, ModalityMask::NONE, ModalityMask { audio: false, phono: true }];
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, &x, Some(&masks), false).unwrap();
    let all: Vec<Var> = out.encoder_weights.iter().chain(&out.trace.self_weights).chain(&out.trace.cross_weights).copied().collect();
    assert!(!out.trace.cross_weights.is_empty());
    for w in all {
        let t = ctx.tape.value(w);
        let n = *t.shape().last().unwrap();
        for r in t.data().chunks(n) {
            let s: f32 = r.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn image_only_ignores_audio_and_phono() {
    let c = cfg(FusionMode::ImageOnly);
    let m = VocSegModel::<f32>::new(c.clone(), 9).unwrap();
    let x = input(&c, 2, 4, 10);
    let other = input(&c, 2, 4, 11);
    let perturbed = ModelInput {
        images: x.images.clone(),
        audio: other.audio,
        phono: other.phono,
    };
    let base = logits(&m, &x, None);
    assert_eq!(base, logits(&m, &perturbed, None));
    assert_eq!(base, logits(&m, &x.video_only(), None));
}

#[test]
fn concat_modes_ignore_unused_modalities() {
    let c = cfg(FusionMode::ConcatVP);
    let m = VocSegModel::<f32>::new(c.clone(), 12).unwrap();
    let x = input(&c, 2, 4, 12);
    let mut y = x.clone();
    y.audio = input(&c, 2, 4, 13).audio;
    assert_eq!(logits(&m, &x, None), logits(&m, &y, None));
    let mut z = x.clone();
    z.phono = input(&c, 2, 4, 14).phono;
    assert_ne!(logits(&m, &x, None), logits(&m, &z, None));
}

#[test]
fn all_dropped_equals_video_only() {
    for mode in [FusionMode::CrossAttention, FusionMode::ConcatVAP] {
        let c = cfg(mode);
        let m = VocSegModel::<f32>::new(c.clone(), 10).unwrap();
        let x = input(&c, 2, 4, 15);
        let dropped = logits(&m, &x, Some(&[ModalityMask::NONE; 2]));
        assert_eq!(dropped, logits(&m, &x.video_only(), None));
        assert_ne!(dropped, logits(&m, &x, None));
    }
}

#[test]
fn frozen_and_untrainable_parameters_get_no_gradient() {
    let c = cfg(FusionMode::CrossAttention);
    let mut m = VocSegModel::<f32>::new(c.clone(), 11).unwrap();
    m.params.set_trainable(IMAGE_PREFIX, false);
    let x = input(&c, 2, 4, 16);
    let mut ctx = m.ctx();
    let out = m.forward(&mut ctx, &x, None, false).unwrap();
    let loss = ctx.tape.sum(out.logits).unwrap();
    ctx.tape.backward(loss).unwrap();
    let grads = ctx.param_grads();
    for ((_, p), g) in m.params.iter().zip(&grads) {
        if p.name.starts_with(AUDIO_PREFIX) || p.name.starts_with(IMAGE_PREFIX) {
            assert!(g.is_none(), "{} received a gradient", p.name);
        }
    }
    let head = m.params.id("head.proj.w").unwrap();
    assert!(grads[head.0].is_some());
    assert!(m.params.iter().filter(|(_, p)| p.name.starts_with(AUDIO_PREFIX)).all(|(_, p)| p.frozen));
}

#[test]
fn checkpoint_round_trip() {
    let c = cfg(FusionMode::ConcatVAP);
    let m = VocSegModel::<f32>::new(c.clone(), 12).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &m).unwrap();
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.params.fingerprint(""), m.params.fingerprint(""));
    let x = input(&c, 2, 4, 17);
    assert_eq!(logits(&back, &x, None), logits(&m, &x, None));
    let mut again = Vec::new();
    write_checkpoint(&mut again, &back).unwrap();
    assert_eq!(buf, again);
    buf[0] = b'X';
    assert!(read_checkpoint(&mut buf.as_slice()).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    let c = cfg(FusionMode::CrossAttention);
    let m = VocSegModel::<f32>::new(c.clone(), 13).unwrap();
    let mut x = input(&c, 2, 4, 18);
    x.images.data_mut()[0] = 1.5;
    assert!(m.forward(&mut m.ctx(), &x, None, false).is_err());
    let x = input(&c, 2, 4, 18);
    assert!(m.forward(&mut m.ctx(), &x, Some(&[ModalityMask::ALL]), false).is_err());
    let wrong = ModelInput {
        images: Tensor::zeros(&[1, 1, 8, 8]),
        audio: None,
        phono: None,
    };
    assert!(m.forward(&mut m.ctx(), &wrong, None, false).is_err());
}
