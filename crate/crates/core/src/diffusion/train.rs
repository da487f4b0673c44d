use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ToyModel;
use super::sample::gaussian;
use crate::conditioning::{ExtendedPrompt, LayerSpec};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::par;
use crate::tensor::{Graph, Tensor};

/// A captioned training image.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: Tensor,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Probability of replacing a caption by the empty prompt, which trains
    /// the unconditional branch used by guidance.
    pub caption_dropout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 3000,
            batch: 8,
            lr: 2e-3,
            seed: 0,
            caption_dropout: 0.1,
        }
    }
}

/// One draw of the denoising objective.
#[derive(Clone, Copy, Debug)]
struct Draw {
    example: usize,
    t: usize,
    noise_seed: u64,
    drop_caption: bool,
}

fn prompts(model: &ToyModel, data: &[TrainExample]) -> Result<Vec<ExtendedPrompt>> {
    data.iter()
        .map(|e| {
            let t = model.tokenize(&e.caption)?;
            Ok(ExtendedPrompt::broadcast(model.registry(), LayerSpec::plain(t)?))
        })
        .collect()
}

/// Loss and, when `with_grads`, gradients for every parameter.
fn draw_loss(
    model: &ToyModel,
    data: &[TrainExample],
    prompts: &[ExtendedPrompt],
    empty: &ExtendedPrompt,
    d: Draw,
    with_grads: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let ex = &data[d.example];
    let noise = gaussian(ex.image.shape(), &mut ChaCha8Rng::seed_from_u64(d.noise_seed));
    let xt = model.schedule().forward_noise(&ex.image, d.t, &noise)?;
    let mut g = Graph::new();
    let b = model.bind(&mut g, with_grads)?;
    let x = g.constant(xt)?;
    let target = g.constant(noise)?;
    let p = if d.drop_caption { empty } else { &prompts[d.example] };
    let out = model.predict_on(&mut g, &b, x, d.t, p)?;
    let loss = g.mse(out.eps, target)?;
    let value = g.value(loss).item();
    if !with_grads {
        return Ok((value, Vec::new()));
    }
    let mut grads = g.backward(loss)?;
    let gs = b
        .nodes()
        .iter()
        .map(|&n| grads.take(n).unwrap_or_else(|| Tensor::zeros(g.shape(n).to_vec())))
        .collect();
    Ok((value, gs))
}

/// Trains every parameter on the denoising objective with Adam. Returns the
/// per-step mean batch loss.
pub fn pretrain(
    model: &mut ToyModel,
    data: &[TrainExample],
    cfg: &PretrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("pretraining corpus is empty".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("batch and learning rate must be positive".into()));
    }
    let prompts = prompts(model, data)?;
    let empty = model.empty_prompt();
    let total = model.schedule().steps;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let draws: Vec<Draw> = (0..cfg.batch)
            .map(|_| Draw {
                example: rng.random_range(0..data.len()),
                t: rng.random_range(1..=total),
                noise_seed: rng.random(),
                drop_caption: rng.random::<f64>() < cfg.caption_dropout,
            })
            .collect();
        let m: &ToyModel = model;
        let results = par::try_map(draws.len(), |i| draw_loss(m, data, &prompts, &empty, draws[i], true))?;
        let mut loss = 0.0;
        let mut sum: Vec<Tensor> = Vec::new();
        for (l, gs) in results {
            loss += l;
            if sum.is_empty() {
                sum = gs;
            } else {
                for (s, g) in sum.iter_mut().zip(&gs) {
                    s.axpy(1.0, g)?;
                }
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::DivergedAt { step });
        }
        for s in &mut sum {
            s.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        adam.step(model.params_mut().tensors_mut(), &sum)?;
        history.push(loss);
        progress(step, loss);
    }
    Ok(history)
}

/// Mean denoising loss over fixed draws: `draws` (t, noise) pairs per example,
/// derived from `seed`, always with the example's own caption.
pub fn denoising_loss(model: &ToyModel, data: &[TrainExample], draws: usize, seed: u64) -> Result<f64> {
    if data.is_empty() || draws == 0 {
        return Err(Error::InvalidArgument("need at least one example and one draw".into()));
    }
    let prompts = prompts(model, data)?;
    let empty = model.empty_prompt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = model.schedule().steps;
    let all: Vec<Draw> = (0..data.len())
        .flat_map(|e| std::iter::repeat_n(e, draws))
        .map(|example| Draw {
            example,
            t: rng.random_range(1..=total),
            noise_seed: rng.random(),
            drop_caption: false,
        })
        .collect();
    let losses = par::try_map(all.len(), |i| draw_loss(model, data, &prompts, &empty, all[i], false))?;
    Ok(losses.iter().map(|(l, _)| l).sum::<f64>() / all.len() as f64)
}
