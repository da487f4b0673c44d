use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear beta schedule over timesteps `1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(skip)]
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(1000, 1e-4, 2e-2).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule T={steps}, beta in [{beta_start}, {beta_end}]"
            )));
        }
        let mut s = NoiseSchedule {
            steps,
            beta_start,
            beta_end,
            alpha_bar: Vec::new(),
        };
        s.rebuild();
        Ok(s)
    }

    /// Recomputes the cumulative products, e.g. after deserialization.
    pub fn rebuild(&mut self) {
        let n = self.steps;
        let mut ab = Vec::with_capacity(n + 1);
        ab.push(1.0);
        let mut prod = 1.0;
        for t in 1..=n {
            let frac = if n == 1 { 0.0 } else { (t - 1) as f64 / (n - 1) as f64 };
            prod *= 1.0 - (self.beta_start + frac * (self.beta_end - self.beta_start));
            ab.push(prod);
        }
        self.alpha_bar = ab;
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    /// Cumulative product of `1 - beta`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `sqrt(ab_t) * image + sqrt(1 - ab_t) * noise`
    pub fn forward_noise(&self, image: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
        self.check_t(t)?;
        if image.shape() != noise.shape() {
            return Err(Error::shape("forward_noise", &[image.shape(), noise.shape()]));
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = image
            .data()
            .iter()
            .zip(noise.data())
            .map(|(x, e)| a * x + b * e)
            .collect();
        Tensor::new(image.shape().to_vec(), data)
    }
}
