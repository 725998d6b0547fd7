use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use sspb_core::imaging::{corrupt_swap, rotate_image};
use sspb_core::metrics::{ssim, SsimParams, SsimWindow};
use sspb_core::models::{bind_params, build_classifier_head, encoder_spec};
use sspb_core::ops::{self, Padding};
use sspb_core::rng::rng_from;
use sspb_core::{AdamConfig, AdamState, EncoderConfig, Graph, Image, ModelSpec, ParamSet, Tensor};

fn noise(seed: u64, shape: &[usize]) -> Tensor<f32> {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..1.0))
}

fn image(seed: u64, side: usize) -> Image {
    let mut rng = rng_from(seed);
    Image::from_fn(side, side, |_, _| [0; 3].map(|_| rng.gen_range(0..=255u8) as f32)).unwrap()
}

fn kernels(c: &mut Criterion) {
    let x = noise(1, &[16, 64, 64, 3]);
    let k = noise(2, &[3, 3, 3, 16]);
    let b = Tensor::zeros(vec![16]);
    c.bench_function("conv2d 16x64x64x3 -> 16, 3x3 s1", |bench| {
        bench.iter(|| ops::conv2d(black_box(&x), &k, &b, 1, Padding::Same).unwrap())
    });
    let x = noise(3, &[16, 16, 16, 64]);
    let k = noise(4, &[3, 3, 64, 64]);
    let b = Tensor::zeros(vec![64]);
    c.bench_function("conv2d 16x16x16x64 -> 64, 3x3 s2", |bench| {
        bench.iter(|| ops::conv2d(black_box(&x), &k, &b, 2, Padding::Same).unwrap())
    });
    let x = noise(5, &[256, 512]);
    let w = noise(6, &[512, 256]);
    let b = Tensor::zeros(vec![256]);
    c.bench_function("dense 256x512 -> 256", |bench| bench.iter(|| ops::dense(black_box(&x), &w, &b).unwrap()));
}

fn classifier() -> ModelSpec {
    let enc = encoder_spec(&EncoderConfig {
        n_stages: 3,
        base_channels: 16,
        max_channels: 256,
        input_side: 64,
    })
    .unwrap();
    ModelSpec::chain(&enc, &build_classifier_head(enc.output_shape()).unwrap()).unwrap()
}

fn training_step(c: &mut Criterion) {
    let spec = classifier();
    let x = noise(7, &[16, 64, 64, 3]);
    let y = Tensor::from_fn(vec![16, 1], |i| (i % 2) as f32);
    let start: ParamSet = spec.init_params(8);
    c.bench_function("classifier step, batch 16 at 64x64", |bench| {
        bench.iter_batched(
            || (start.clone(), AdamState::new(AdamConfig::default())),
            |(mut params, mut adam)| {
                let mut g = Graph::<f32>::new();
                let vars = bind_params(&mut g, &params);
                let xv = g.constant(x.clone());
                let yv = g.constant(y.clone());
                let pred = spec.forward(&mut g, &vars, xv, true, &mut rng_from(9)).unwrap();
                let loss = g.mse(pred, yv).unwrap();
                let mut grads = g.backward(loss).unwrap();
                let grads: ParamSet =
                    vars.iter().filter_map(|(name, &v)| grads.take(v).map(|t| (name.clone(), t))).collect();
                adam.step(&mut params, &grads).unwrap();
                params
            },
            BatchSize::LargeInput,
        )
    });
}

fn imaging(c: &mut Criterion) {
    let img = image(10, 64);
    let other = image(11, 64);
    c.bench_function("corrupt_swap 100 x 9px at 64x64", |bench| {
        bench.iter(|| corrupt_swap(black_box(&img), 100, 9, &mut rng_from(12)).unwrap())
    });
    c.bench_function("rotate 37 deg at 64x64", |bench| bench.iter(|| rotate_image(black_box(&img), 37.0).unwrap()));
    let global = SsimParams::default();
    let wang = SsimParams {
        window: SsimWindow::WANG,
        ..SsimParams::default()
    };
    c.bench_function("ssim global 64x64", |bench| bench.iter(|| ssim(black_box(&img), &other, &global).unwrap()));
    c.bench_function("ssim gaussian 64x64", |bench| bench.iter(|| ssim(black_box(&img), &other, &wang).unwrap()));
}

criterion_group!(benches, kernels, training_step, imaging);
criterion_main!(benches);
