use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hazenet_core::autograd::Graph;
use hazenet_core::data::procedural_scene;
use hazenet_core::eval::ssim;
use hazenet_core::haze_physics::{synthesize_haze, AtmosphericLight, TransmissionMap};
use hazenet_core::train::BatchSampler;
use hazenet_core::{LossWeights, ModelConfig, Sample, Shape, Tensor, TrainConfig, Trainer};

fn ramp(shape: Shape) -> Tensor<f32> {
    let mut i = 0usize;
    Tensor::from_fn(shape, |_, _, _, _| {
        i += 1;
        ((i * 7919) % 1000) as f32 / 1000.0 - 0.5
    })
}

fn conv(c: &mut Criterion) {
    let x = ramp(Shape::new(4, 32, 32, 32));
    let w = ramp(Shape::new(32, 32, 3, 3));
    c.bench_function("conv3x3 32->32 4x32x32 forward", |b| {
        b.iter(|| {
            let g = Graph::new();
            let y = g.conv2d(g.constant(x.clone()), g.constant(w.clone()), None, 1, 1);
            black_box(g.item(g.mean(y)))
        })
    });
    c.bench_function("conv3x3 32->32 4x32x32 forward+backward", |b| {
        b.iter(|| {
            let g = Graph::new();
            let y = g.conv2d(g.param(x.clone()), g.param(w.clone()), None, 1, 1);
            black_box(g.backward(g.mean(y)))
        })
    });
}

fn metrics(c: &mut Criterion) {
    let x = procedural_scene(1, 96, 96);
    let y = procedural_scene(2, 96, 96);
    c.bench_function("ssim 96x96", |b| b.iter(|| ssim(black_box(x.tensor()), black_box(y.tensor())).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let samples: Vec<Sample> = (0..4)
        .map(|i| {
            let j = procedural_scene(i, 32, 32);
            let t = TransmissionMap::filled(32, 32, 0.6f32).unwrap();
            let a = AtmosphericLight::gray(0.9f32).unwrap();
            let h = synthesize_haze(&j, &t, &a).unwrap();
            Sample::new(format!("s{i}"), h, j, Some(t), Some(a)).unwrap()
        })
        .collect();
    let tc = TrainConfig {
        patch_size: 32,
        ..Default::default()
    };
    let sampler = BatchSampler::new(&samples, tc.batch_size, tc.patch_size, 0).unwrap();
    let batch = sampler.batch(1).unwrap();
    let mut trainer = Trainer::new(&ModelConfig::default(), &LossWeights::default(), &tc).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step batch 4 patch 32", |b| {
        b.iter(|| trainer.step(&batch).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, metrics, train_step);
criterion_main!(benches);
