//! Gaussian kernel density estimate over the natural-token lookup rows.

use serde::{Deserialize, Serialize};

use crate::conditioning::LookupTable;
use crate::error::{Error, Result};

/// Lower bound applied to bandwidths of zero-variance dimensions.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `n^(-1/5) * sigma_d` per dimension (sample standard deviation).
    Scott,
    Fixed(f64),
}

/// How per-dimension log densities are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    /// Product of one-dimensional estimates (sum of log densities).
    Sum,
    /// Mean of the one-dimensional log densities.
    Mean,
    /// One d-dimensional estimate with an isotropic kernel.
    JointIsotropic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    points: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    /// Bandwidth of the isotropic joint kernel.
    joint_bandwidth: f64,
    pub combine: Combine,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl DensityModel {
    /// Fits on the natural rows of `table`.
    pub fn fit(table: &LookupTable, bw: Bandwidth) -> Result<Self> {
        Self::fit_points(table.natural_rows().map(<[f64]>::to_vec).collect(), bw)
    }

    pub fn fit_points(points: Vec<Vec<f64>>, bw: Bandwidth) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidArgument("density needs at least two reference points".into()));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("reference points must share a positive dimension and be finite".into()));
        }
        let sigma: Vec<f64> = (0..d)
            .map(|k| {
                let m = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
                (points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            })
            .collect();
        let bandwidths: Vec<f64> = match bw {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => vec![h; d],
            Bandwidth::Fixed(h) => return Err(Error::InvalidArgument(format!("bandwidth {h} must be positive"))),
            Bandwidth::Scott => {
                let f = (n as f64).powf(-0.2);
                sigma
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let h = f * s;
                        if h < BANDWIDTH_FLOOR {
                            log::warn!("dimension {k} has zero variance; bandwidth floored at {BANDWIDTH_FLOOR}");
                            BANDWIDTH_FLOOR
                        } else {
                            h
                        }
                    })
                    .collect()
            }
        };
        let joint_bandwidth = match bw {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Scott => {
                let s = (sigma.iter().map(|s| s * s).sum::<f64>() / d as f64).sqrt();
                ((n as f64).powf(-1.0 / (d as f64 + 4.0)) * s).max(BANDWIDTH_FLOOR)
            }
        };
        Ok(DensityModel {
            points,
            bandwidths,
            joint_bandwidth,
            combine: Combine::Sum,
        })
    }

    pub fn with_combine(mut self, c: Combine) -> Self {
        self.combine = c;
        self
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "query must be {} finite values",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Log density of one dimension and its derivative in `x`.
    fn dim_log_density(&self, k: usize, x: f64) -> (f64, f64) {
        let h = self.bandwidths[k];
        let logs: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let u = (x - p[k]) / h;
                -0.5 * u * u
            })
            .collect();
        let lse = log_sum_exp(&logs);
        let value = lse - (self.len() as f64).ln() - h.ln() - LN_SQRT_2PI;
        let grad = self
            .points
            .iter()
            .zip(&logs)
            .map(|(p, l)| (l - lse).exp() * -(x - p[k]) / (h * h))
            .sum();
        (value, grad)
    }

    /// Log density and its gradient with respect to `x`.
    pub fn log_density_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let d = self.dim();
        match self.combine {
            Combine::Sum | Combine::Mean => {
                let mut total = 0.0;
                let mut grad = Vec::with_capacity(d);
                for (k, &xk) in x.iter().enumerate() {
                    let (v, g) = self.dim_log_density(k, xk);
                    total += v;
                    grad.push(g);
                }
                if self.combine == Combine::Mean {
                    total /= d as f64;
                    grad.iter_mut().for_each(|g| *g /= d as f64);
                }
                Ok((total, grad))
            }
            Combine::JointIsotropic => {
                let h = self.joint_bandwidth;
                let logs: Vec<f64> = self
                    .points
                    .iter()
                    .map(|p| -0.5 * x.iter().zip(p).map(|(a, b)| ((a - b) / h).powi(2)).sum::<f64>())
                    .collect();
                let lse = log_sum_exp(&logs);
                let value = lse - (self.len() as f64).ln() - d as f64 * (h.ln() + LN_SQRT_2PI);
                let mut grad = vec![0.0; d];
                for (p, l) in self.points.iter().zip(&logs) {
                    let w = (l - lse).exp();
                    for k in 0..d {
                        grad[k] -= w * (x[k] - p[k]) / (h * h);
                    }
                }
                Ok((value, grad))
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_grad(x).map(|(v, _)| v)
    }
}

/// Percentage of `reference` values at or below `v`.
pub fn percentile(reference: &[f64], v: f64) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    100.0 * reference.iter().filter(|&&r| r <= v).count() as f64 / reference.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub token_id: usize,
    pub group: String,
    pub layer: String,
    pub log_density: f64,
    pub percentile: f64,
}

/// One row per natural token, then one per optimized embedding. `optimized`
/// holds `(token id, group, layer name, vector)`.
pub fn density_report(model: &DensityModel, optimized: &[(usize, String, String, Vec<f64>)]) -> Result<Vec<DensityRow>> {
    if optimized.is_empty() {
        return Err(Error::InvalidArgument("density report needs at least one optimized embedding".into()));
    }
    let natural = crate::par::try_map(model.len(), |i| model.log_density(&model.points[i]))?;
    let mut rows: Vec<DensityRow> = natural
        .iter()
        .enumerate()
        .map(|(i, &v)| DensityRow {
            token_id: i,
            group: "natural".into(),
            layer: String::new(),
            log_density: v,
            percentile: percentile(&natural, v),
        })
        .collect();
    for (id, group, layer, x) in optimized {
        let v = model.log_density(x)?;
        rows.push(DensityRow {
            token_id: *id,
            group: group.clone(),
            layer: layer.clone(),
            log_density: v,
            percentile: percentile(&natural, v),
        });
    }
    Ok(rows)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_at_center() {
        let m = DensityModel::fit_points(vec![vec![0.3], vec![0.3]], Bandwidth::Fixed(0.7)).unwrap();
        let v = m.log_density(&[0.3]).unwrap();
        let expect = -(0.7 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn far_queries_stay_finite() {
        let m = DensityModel::fit_points(vec![vec![0.0], vec![1.0]], Bandwidth::Fixed(0.01)).unwrap();
        let v = m.log_density(&[1e3]).unwrap();
        assert!(v.is_finite() && v < -1e9);
    }

    #[test]
    fn zero_variance_dimension_is_floored() {
        let m = DensityModel::fit_points(vec![vec![1.0, 0.0], vec![1.0, 2.0]], Bandwidth::Scott).unwrap();
        assert_eq!(m.bandwidths()[0], BANDWIDTH_FLOOR);
        assert!(m.bandwidths()[1] > 0.0);
    }
}
