use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{guide, ToyModel};
use super::unet::UNetOutput;
use crate::conditioning::{ExtendedPrompt, PromptTemplate};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            guidance: 7.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, total: usize) -> Result<()> {
        if self.steps == 0 || self.steps > total || !(self.guidance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampler needs 1 <= steps <= {total} and guidance >= 0, got {} and {}",
                self.steps, self.guidance
            )));
        }
        Ok(())
    }
}

/// Descending timesteps visited by a `steps`-step sampler over `1..=total`.
pub fn timesteps(steps: usize, total: usize) -> Vec<usize> {
    (0..steps).map(|i| (steps - i) * total / steps).collect()
}

/// Standard normal tensor drawn from a seeded stream.
pub fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Called with the timestep and the conditional branch's graph at every step.
pub type Observer<'a> = dyn FnMut(usize, &Graph, &UNetOutput) + 'a;

/// Deterministic DDIM sampling with classifier-free guidance; returns an
/// image in `[-1, 1]`.
pub fn ddim_sample(model: &ToyModel, p: &ExtendedPrompt, cfg: &SamplerConfig) -> Result<Tensor> {
    ddim_sample_observed(model, p, cfg, &mut |_, _, _| {})
}

pub fn ddim_sample_observed(
    model: &ToyModel,
    p: &ExtendedPrompt,
    cfg: &SamplerConfig,
    observer: &mut Observer<'_>,
) -> Result<Tensor> {
    let uncond = model.empty_prompt();
    ddim_loop(model, cfg, |x, t| {
        let mut g = Graph::new();
        let b = model.bind(&mut g, false)?;
        let xn = g.constant(x.clone())?;
        let out = model.predict_on(&mut g, &b, xn, t, p)?;
        observer(t, &g, &out);
        let cond = g.value(out.eps).clone();
        let u = model.predict_noise(x, t, &uncond)?;
        Ok(guide(&u, &cond, cfg.guidance))
    })
}

/// Sampling through the ordinary single-prompt path: each template is
/// encoded once and shared by every cross-attention layer.
pub fn ddim_sample_single(model: &ToyModel, template: &PromptTemplate, cfg: &SamplerConfig) -> Result<Tensor> {
    let empty = model.tokenize("")?;
    ddim_loop(model, cfg, |x, t| {
        let c = model.predict_noise_single(x, t, template)?;
        let u = model.predict_noise_single(x, t, &empty)?;
        Ok(guide(&u, &c, cfg.guidance))
    })
}

fn ddim_loop(
    model: &ToyModel,
    cfg: &SamplerConfig,
    mut eps_at: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    let sched = model.schedule();
    cfg.validate(sched.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = gaussian(&model.image_shape(), &mut rng);
    let ts = timesteps(cfg.steps, sched.steps);
    for (i, &t) in ts.iter().enumerate() {
        let eps = eps_at(&x, t)?;
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        let next: Vec<f64> = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &e)| pa * (xv - sb * e) / sa + pb * e)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingDiverged { step: i });
        }
        x = Tensor::new(x.shape().to_vec(), next)?;
    }
    let clamped = x.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Tensor::new(x.shape().to_vec(), clamped)
}
