use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use idblend::autograd::{no_grad, Var};
use idblend::eval::textures::texture;
use idblend::eval::{sifid, StubExtractor};
use idblend::networks::{as_vars, generator_forward, GeneratorSpec};
use idblend::render::{IdSource, NoiseMode, RenderJob};
use idblend::tensor::conv2d;
use idblend::train::init_model;
use idblend::{Tensor, TrainConfig};

fn filled(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rand::Rng::random_range(&mut rng, -1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    for (ch, side) in [(32, 64), (32, 128), (64, 64)] {
        let x = filled([1, ch, side, side], 1);
        let w = filled([ch, ch, 3, 3], 2);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ch}ch_{side}px")), &(), |b, _| {
            b.iter(|| conv2d(black_box(&x), black_box(&w)))
        });
    }
    g.finish();
}

fn generator(c: &mut Criterion) {
    let spec = GeneratorSpec { channels: 32, num_ids: 2, spade_hidden: 32 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = spec.init(&mut rng);
    let vars = as_vars(&params, false);
    let side = 74;
    let x = Var::constant(filled([1, 3, side, side], 4));
    let res = Var::constant(filled([1, 3, side - 10, side - 10], 5));
    let id = Var::constant(Tensor::full([1, 2, side, side], 0.5));
    c.bench_function("generator_forward_64px", |b| {
        b.iter(|| no_grad(|| generator_forward(&spec, &vars, &x, &res, &id)).unwrap())
    });
}

fn render(c: &mut Criterion) {
    let mut cfg = TrainConfig::default();
    cfg.set("channel_base", "16").unwrap();
    cfg.set("max_dim", "128").unwrap();
    let imgs = vec![texture(0, (128, 128), 1), texture(1, (128, 128), 2)];
    let model = init_model(&imgs, &cfg).unwrap();
    let sizes = model.plan.sizes_for_output((128, 256));
    c.bench_function("render_128x256", |b| {
        b.iter(|| {
            let job = RenderJob::new(&model, sizes.clone(), IdSource::Blend(vec![0.5, 0.5]), NoiseMode::Random, 7).unwrap();
            job.render().unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let a = texture(0, (96, 96), 1);
    let b2 = texture(0, (96, 96), 2);
    let ex = StubExtractor::default();
    c.bench_function("stub_sifid_96px", |b| b.iter(|| sifid(&a, &b2, &ex).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, generator, render, metrics
}
criterion_main!(benches);
