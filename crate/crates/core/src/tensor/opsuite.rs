//! Finite-difference checks of every differentiable op on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{finite_diff_check, Graph, NodeId, Tensor};
use crate::error::Result;

/// Step used by the suite.
pub const SUITE_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    /// Which input the gradient was taken with respect to.
    pub input: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub norm_rel_error: f64,
}

type Build = fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

fn cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, x| g.matmul(x[0], x[1])),
        ("transpose", vec![vec![3, 4]], |g, x| g.transpose(x[0])),
        ("add", vec![vec![2, 3], vec![2, 3]], |g, x| g.add(x[0], x[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |g, x| g.sub(x[0], x[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, x| g.mul(x[0], x[1])),
        ("scale", vec![vec![4]], |g, x| g.scale(x[0], -1.7)),
        ("reshape", vec![vec![2, 3]], |g, x| g.reshape(x[0], [3, 2])),
        ("concat0", vec![vec![2, 3], vec![1, 3]], |g, x| g.concat(&[x[0], x[1]], 0)),
        ("concat1", vec![vec![2, 3], vec![2, 2]], |g, x| g.concat(&[x[0], x[1]], 1)),
        ("softmax", vec![vec![3, 4]], |g, x| g.softmax(x[0])),
        ("group_norm", vec![vec![4, 2, 2], vec![4], vec![4]], |g, x| g.group_norm(x[0], 2, x[1], x[2])),
        ("layer_norm", vec![vec![3, 4], vec![4], vec![4]], |g, x| g.layer_norm(x[0], x[1], x[2])),
        ("silu", vec![vec![2, 4]], |g, x| g.silu(x[0])),
        ("conv3x3", vec![vec![2, 4, 4], vec![3, 2, 3, 3], vec![3]], |g, x| g.conv3x3(x[0], x[1], x[2])),
        ("avg_pool2", vec![vec![2, 4, 4]], |g, x| g.avg_pool2(x[0])),
        ("upsample2", vec![vec![2, 2, 2]], |g, x| g.upsample2(x[0])),
        ("attention", vec![vec![3, 4], vec![4, 4], vec![4, 2]], |g, x| g.attention(x[0], x[1], x[2], None)),
        ("attention_masked", vec![vec![3, 4], vec![4, 4], vec![4, 2]], |g, x| {
            g.attention(x[0], x[1], x[2], Some(&[true, true, false, true]))
        }),
        ("add_row_bias", vec![vec![3, 4], vec![4]], |g, x| g.add_row_bias(x[0], x[1])),
        ("add_channel_bias", vec![vec![3, 2, 2], vec![3]], |g, x| g.add_channel_bias(x[0], x[1])),
        ("sum", vec![vec![2, 3]], |g, x| g.sum(x[0])),
        ("mean", vec![vec![2, 3]], |g, x| g.mean(x[0])),
        ("mse", vec![vec![2, 3], vec![2, 3]], |g, x| g.mse(x[0], x[1])),
        ("gather_rows", vec![vec![4, 3]], |g, x| g.gather_rows(x[0], &[2, 0, 2, 3])),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |g, x| g.linear(x[0], x[1], x[2])),
    ]
}

/// Names of the ops covered by [`op_gradient_suite`].
pub fn suite_ops() -> Vec<&'static str> {
    cases().into_iter().map(|c| c.0).collect()
}

/// Checks the gradient of `sum(op(inputs) * r)` for a fixed random `r`,
/// once per input of every op. Inputs are drawn from `seed`.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shapes, build) in cases() {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| normal(s, &mut rng)).collect();
        let out_shape = {
            let mut g = Graph::new();
            let ids = inputs.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
            let y = build(&mut g, &ids)?;
            g.shape(y).to_vec()
        };
        let r = normal(&out_shape, &mut rng);
        for i in 0..inputs.len() {
            let res = finite_diff_check(
                |g, x| {
                    let mut ids = Vec::with_capacity(inputs.len());
                    for (j, t) in inputs.iter().enumerate() {
                        ids.push(if j == i { x } else { g.constant(t.clone())? });
                    }
                    let y = build(g, &ids)?;
                    let rc = g.constant(r.clone())?;
                    let w = g.mul(y, rc)?;
                    g.sum(w)
                },
                &inputs[i],
                SUITE_EPS,
            )?;
            out.push(OpCheck {
                op: name.to_string(),
                input: i,
                max_rel_error: res.max_rel_error,
                max_abs_error: res.max_abs_error,
                norm_rel_error: res.norm_rel_error,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for c in op_gradient_suite(7).unwrap() {
            assert!(c.max_rel_error < 1e-6 && c.norm_rel_error < 1e-6, "{c:?}");
        }
    }
}
