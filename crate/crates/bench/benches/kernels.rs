use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vocseg_core::harness::{make_batch, prepare_samples};
use vocseg_core::metrics::{evaluate_frame, squared_edt};
use vocseg_core::model::{ModelConfig, VocSegModel};
use vocseg_core::numcore::{Tape, Tensor};
use vocseg_core::objectives::{total_loss, ContrastiveConfig, LossWeights};
use vocseg_core::synthdata::{generate_dataset, GeneratorConfig};
use vocseg_core::verify::random_label_mask;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [64usize, 256] {
        let a = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[n, n], 1.0, &mut rng);
        c.bench_function(&format!("matmul_fwd_bwd_{n}"), |bench| {
            bench.iter(|| {
                let mut t = Tape::new();
                let (x, y) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
                let z = t.matmul(x, y).unwrap();
                let s = t.sum(z).unwrap();
                t.backward(s).unwrap();
                black_box(t.grad(x).map(|g| g[0]));
            })
        });
    }
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seeds: Vec<bool> = (0..84 * 84).map(|i| i % 97 == 0).collect();
    c.bench_function("squared_edt_84", |b| b.iter(|| black_box(squared_edt(84, 84, black_box(&seeds)))));
    let p = random_label_mask(&mut rng, 84, 84, 5, 2.4);
    let t = random_label_mask(&mut rng, 84, 84, 5, 2.4);
    c.bench_function("evaluate_frame_84", |b| b.iter(|| black_box(evaluate_frame(&p, &t, 5).unwrap())));
}

fn train_step(c: &mut Criterion) {
    let ds = generate_dataset(&GeneratorConfig {
        n_speakers: 1,
        frames_per_speaker: 8,
        augmentations: 0,
        ..Default::default()
    })
    .unwrap();
    let cfg = ModelConfig::default();
    let samples = prepare_samples(&ds, &(0..8).collect::<Vec<_>>(), cfg.image_size);
    let refs: Vec<_> = samples.iter().collect();
    let (input, masks) = make_batch(&refs);
    let model = VocSegModel::<f32>::new(cfg, 0).unwrap();
    let (weights, con) = (LossWeights::default(), ContrastiveConfig::default());
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("batch8_default_dims", |b| {
        b.iter(|| {
            let mut ctx = model.ctx();
            let out = model.forward(&mut ctx, &input, None, true).unwrap();
            let parts = total_loss(&model, &mut ctx, &out, &masks, &weights, &con).unwrap();
            ctx.tape.backward(parts.total).unwrap();
            black_box(ctx.param_grads().len())
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, metrics, train_step);
criterion_main!(benches);
