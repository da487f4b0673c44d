use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pplus_core::conditioning::Vocabulary;
use pplus_core::diffusion::{ddim_sample, NoiseSchedule, SamplerConfig, ToyModel, UNetConfig};
use pplus_core::inversion::{embed_init, loss_xti, sample_draws, InitStrategy, Mode};
use pplus_core::par;
use pplus_core::synthcorpus::make_concept;

fn model() -> ToyModel {
    ToyModel::new(UNetConfig::micro5(), Vocabulary::toy(), NoiseSchedule::default(), 1).unwrap()
}

fn bench_loss(c: &mut Criterion) {
    let m = model();
    let images = make_concept("diamond", "orange", "solid", 4, 100, 16).unwrap();
    let templates = vec![m.tokenize("a photo of <token>").unwrap()];
    let emb = embed_init(&m, &InitStrategy::CoarseWord("diamond".into()), Mode::Xti).unwrap();
    let draws = sample_draws(8, images.len(), 1, 1000, &mut ChaCha8Rng::seed_from_u64(3));
    let mut g = c.benchmark_group("xti_loss_batch8");
    g.sample_size(10);
    for (name, seq) in [("parallel", false), ("sequential", true)] {
        par::set_sequential(seq);
        g.bench_function(name, |b| b.iter(|| black_box(loss_xti(&m, &images, &templates, &emb, &draws).unwrap())));
    }
    par::set_sequential(false);
    g.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let m = model();
    let prompts: Vec<_> = ["red square", "blue circle", "green triangle", "orange diamond"]
        .iter()
        .map(|t| m.plain_prompt(t).unwrap())
        .collect();
    let cfg = SamplerConfig {
        steps: 5,
        ..SamplerConfig::default()
    };
    let mut g = c.benchmark_group("sample_4_prompts");
    g.sample_size(10);
    for (name, seq) in [("parallel", false), ("sequential", true)] {
        par::set_sequential(seq);
        g.bench_function(name, |b| {
            b.iter(|| black_box(par::try_map(prompts.len(), |i| ddim_sample(&m, &prompts[i], &cfg)).unwrap()))
        });
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, bench_loss, bench_sampling);
criterion_main!(benches);
