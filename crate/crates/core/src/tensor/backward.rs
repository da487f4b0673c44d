use std::collections::BTreeMap;

use super::graph::{Graph, NodeId, Op};
use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Gradients of a scalar loss, keyed by leaf handle.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    /// Gradient for `id`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.map
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.map.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

struct Acc<'g> {
    graph: &'g Graph,
    grads: Vec<Option<Vec<f64>>>,
}

impl Acc<'_> {
    fn wants(&self, id: NodeId) -> bool {
        self.graph.nodes[id.0].requires_grad
    }

    fn add(&mut self, id: NodeId, g: Vec<f64>) {
        if !self.wants(id) {
            return;
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn add_with(&mut self, id: NodeId, f: impl FnOnce() -> Vec<f64>) {
        if self.wants(id) {
            let g = f();
            self.add(id, g);
        }
    }
}

impl Graph {
    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns gradients for every leaf that requires grad (zero-filled when
    /// the loss does not reach it) plus the loss itself, whose gradient is 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut acc = Acc {
            graph: self,
            grads: vec![None; loss.0 + 1],
        };
        let mut out = Gradients::default();
        out.map.insert(loss, Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        acc.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                let g = acc.grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                if idx != loss.0 {
                    out.map
                        .insert(NodeId(idx), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                continue;
            }
            let Some(g) = acc.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut acc);
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[f64], acc: &mut Acc<'_>) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                acc.add_with(*a, || {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_a_bt_acc(&mut ga, g, self.value(*b).data(), m, n, k);
                    ga
                });
                acc.add_with(*b, || {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_at_b_acc(&mut gb, self.value(*a).data(), g, m, k, n);
                    gb
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc.add_with(*a, || kernels::transpose(g, n, m));
            }
            Op::Add(a, b) => {
                acc.add_with(*a, || g.to_vec());
                acc.add_with(*b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                acc.add_with(*a, || g.to_vec());
                acc.add_with(*b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                acc.add_with(*a, || {
                    g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect()
                });
                acc.add_with(*b, || {
                    g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect()
                });
            }
            Op::Scale(a, s) => acc.add_with(*a, || g.iter().map(|v| v * s).collect()),
            Op::Reshape(a) => acc.add_with(*a, || g.to_vec()),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &i in inputs {
                    let ext = self.shape(i)[*axis];
                    acc.add_with(i, || {
                        let mut gi = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[start..start + ext * inner]);
                        }
                        gi
                    });
                    offset += ext;
                }
            }
            Op::Softmax(a) => {
                let cols = *node.value.shape().last().unwrap();
                acc.add_with(*a, || kernels::softmax_rows_backward(y, g, cols));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let shape = self.shape(*x);
                let c = shape[0];
                let per_c: usize = shape[1..].iter().product();
                let cpg = c / groups;
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let xhat = |i: usize, grp: usize| (xd[i] - mean[grp]) * rstd[grp];
                acc.add_with(*gamma, || {
                    (0..c)
                        .map(|ch| {
                            let grp = ch / cpg;
                            (ch * per_c..(ch + 1) * per_c)
                                .map(|i| g[i] * xhat(i, grp))
                                .sum()
                        })
                        .collect()
                });
                acc.add_with(*beta, || {
                    (0..c)
                        .map(|ch| g[ch * per_c..(ch + 1) * per_c].iter().sum())
                        .collect()
                });
                acc.add_with(*x, || {
                    let mut gx = vec![0.0; xd.len()];
                    let gsize = (cpg * per_c) as f64;
                    for grp in 0..*groups {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for ch in grp * cpg..(grp + 1) * cpg {
                            for i in ch * per_c..(ch + 1) * per_c {
                                let dxh = g[i] * gd[ch];
                                s1 += dxh;
                                s2 += dxh * xhat(i, grp);
                            }
                        }
                        let (m1, m2) = (s1 / gsize, s2 / gsize);
                        for ch in grp * cpg..(grp + 1) * cpg {
                            for i in ch * per_c..(ch + 1) * per_c {
                                let dxh = g[i] * gd[ch];
                                gx[i] = rstd[grp] * (dxh - m1 - xhat(i, grp) * m2);
                            }
                        }
                    }
                    gx
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (l, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let xhat = |r: usize, j: usize| (xd[r * d + j] - mean[r]) * rstd[r];
                acc.add_with(*gamma, || {
                    (0..d)
                        .map(|j| (0..l).map(|r| g[r * d + j] * xhat(r, j)).sum())
                        .collect()
                });
                acc.add_with(*beta, || {
                    (0..d).map(|j| (0..l).map(|r| g[r * d + j]).sum()).collect()
                });
                acc.add_with(*x, || {
                    let mut gx = vec![0.0; l * d];
                    for r in 0..l {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let dxh = g[r * d + j] * gd[j];
                            s1 += dxh;
                            s2 += dxh * xhat(r, j);
                        }
                        let (m1, m2) = (s1 / d as f64, s2 / d as f64);
                        for j in 0..d {
                            let dxh = g[r * d + j] * gd[j];
                            gx[r * d + j] = rstd[r] * (dxh - m1 - xhat(r, j) * m2);
                        }
                    }
                    gx
                });
            }
            Op::Silu(a) => acc.add_with(*a, || {
                g.iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, &x)| {
                        let s = kernels::sigmoid(x);
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect()
            }),
            Op::Conv3x3 { x, w, b } => {
                let (cin, h, wd) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let cout = self.shape(*w)[0];
                let hw = h * wd;
                acc.add_with(*x, || {
                    kernels::conv3x3_grad_input(g, self.value(*w).data(), cin, cout, h, wd)
                });
                acc.add_with(*w, || {
                    kernels::conv3x3_grad_weight(g, self.value(*x).data(), cin, cout, h, wd)
                });
                acc.add_with(*b, || {
                    (0..cout).map(|co| g[co * hw..(co + 1) * hw].iter().sum()).collect()
                });
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*a)[2]);
                acc.add_with(*a, || {
                    let (oh, ow) = (h / 2, w / 2);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for yy in 0..h {
                            for xx in 0..w {
                                gx[ch * h * w + yy * w + xx] =
                                    0.25 * g[ch * oh * ow + (yy / 2) * ow + xx / 2];
                            }
                        }
                    }
                    gx
                });
            }
            Op::Upsample2(a) => {
                let (c, h, w) = (self.shape(*a)[0], self.shape(*a)[1], self.shape(*a)[2]);
                acc.add_with(*a, || {
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut gx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for yy in 0..oh {
                            for xx in 0..ow {
                                gx[ch * h * w + (yy / 2) * w + xx / 2] +=
                                    g[ch * oh * ow + yy * ow + xx];
                            }
                        }
                    }
                    gx
                });
            }
            Op::Attention {
                q,
                k,
                v,
                scale,
                weights,
            } => {
                let (lq, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let lk = self.shape(*k)[0];
                let dv = self.shape(*v)[1];
                acc.add_with(*v, || {
                    let mut gv = vec![0.0; lk * dv];
                    kernels::matmul_at_b_acc(&mut gv, weights, g, lq, lk, dv);
                    gv
                });
                if acc.wants(*q) || acc.wants(*k) {
                    let mut gw = vec![0.0; lq * lk];
                    kernels::matmul_a_bt_acc(&mut gw, g, self.value(*v).data(), lq, dv, lk);
                    let mut gs = kernels::softmax_rows_backward(weights, &gw, lk);
                    gs.iter_mut().for_each(|x| *x *= scale);
                    acc.add_with(*q, || {
                        let mut gq = vec![0.0; lq * d];
                        kernels::matmul_acc(&mut gq, &gs, self.value(*k).data(), lq, lk, d);
                        gq
                    });
                    acc.add_with(*k, || {
                        let mut gk = vec![0.0; lk * d];
                        kernels::matmul_at_b_acc(&mut gk, &gs, self.value(*q).data(), lq, lk, d);
                        gk
                    });
                }
            }
            Op::AddRowBias(x, b) => {
                let n = self.shape(*b)[0];
                acc.add_with(*x, || g.to_vec());
                acc.add_with(*b, || {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    gb
                });
            }
            Op::AddChannelBias(x, b) => {
                let c = self.shape(*b)[0];
                let per = g.len() / c;
                acc.add_with(*x, || g.to_vec());
                acc.add_with(*b, || {
                    (0..c).map(|ch| g[ch * per..(ch + 1) * per].iter().sum()).collect()
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc.add_with(*a, || vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc.add_with(*a, || vec![g[0] / n as f64; n]);
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len() as f64;
                let diff: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                    .collect();
                if acc.wants(*b) {
                    acc.add(*b, diff.iter().map(|v| -v).collect());
                }
                acc.add(*a, diff);
            }
            Op::GatherRows { table, ids } => {
                let (v, d) = (self.shape(*table)[0], self.shape(*table)[1]);
                acc.add_with(*table, || {
                    let mut gt = vec![0.0; v * d];
                    for (r, &i) in ids.iter().enumerate() {
                        gt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                    gt
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones([2, 2]));
        assert_eq!(grads.get(s).unwrap().item(), 1.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones([2]), true).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones([2])).unwrap();
        let x = g.leaf(Tensor::ones([2]), true).unwrap();
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let unused = g.leaf(Tensor::ones([3]), true).unwrap();
        let x = g.leaf(Tensor::ones([2]), true).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros([3]));
    }
}
