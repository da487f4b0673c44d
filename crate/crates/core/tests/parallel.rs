use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pplus_core::conditioning::Vocabulary;
use pplus_core::diffusion::{ddim_sample, NoiseSchedule, SamplerConfig, ToyModel, UNetConfig};
use pplus_core::inversion::{embed_init, loss_xti, sample_draws, InitStrategy, Mode};
use pplus_core::par;
use pplus_core::synthcorpus::make_concept;

// Toggles the global switch, so it lives in its own test binary.
#[test]
fn parallel_and_sequential_agree_bitwise() {
    let m = ToyModel::new(UNetConfig::micro5(), Vocabulary::toy(), NoiseSchedule::default(), 4).unwrap();
    let images = make_concept("cross", "purple", "stripes", 3, 9, 16).unwrap();
    let templates = vec![m.tokenize("a photo of <token>").unwrap()];
    let emb = embed_init(&m, &InitStrategy::CoarseWord("cross".into()), Mode::Xti).unwrap();
    let draws = sample_draws(6, images.len(), 1, 1000, &mut ChaCha8Rng::seed_from_u64(8));
    let prompts: Vec<_> = ["red square", "blue circle", "green triangle"].iter().map(|t| m.plain_prompt(t).unwrap()).collect();
    let cfg = SamplerConfig {
        steps: 4,
        ..SamplerConfig::default()
    };
    let run = || {
        let (loss, grad) = loss_xti(&m, &images, &templates, &emb, &draws).unwrap();
        let samples = par::try_map(prompts.len(), |i| ddim_sample(&m, &prompts[i], &cfg)).unwrap();
        (loss, grad, samples)
    };
    par::set_sequential(false);
    let a = run();
    par::set_sequential(true);
    let b = run();
    par::set_sequential(false);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
    assert!(a.2.iter().zip(&b.2).all(|(x, y)| x.bit_eq(y)));
}
