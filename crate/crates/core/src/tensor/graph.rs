use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a record on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Reshape(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Softmax(NodeId),
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Silu(NodeId),
    Conv3x3 { x: NodeId, w: NodeId, b: NodeId },
    AvgPool2(NodeId),
    Upsample2(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        scale: f64,
        weights: Vec<f64>,
    },
    AddRowBias(NodeId, NodeId),
    AddChannelBias(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    GatherRows { table: NodeId, ids: Vec<usize> },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Inputs always precede outputs, so the record order is a topological order
/// and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

const EPS_NORM: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Normalized weights saved by an attention node, with `(queries, keys)`.
    pub fn attention_weights(&self, id: NodeId) -> Option<(&[f64], usize, usize)> {
        match &self.nodes[id.0].op {
            Op::Attention { q, k, weights, .. } => {
                Some((weights, self.shape(*q)[0], self.shape(*k)[0]))
            }
            _ => None,
        }
    }

    /// Adds an input tensor. Non-finite leaves are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_raw(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, a: NodeId) -> Result<(usize, usize)> {
        match self.shape(a) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::shape(op, &[s])),
        }
    }

    fn dims3(&self, op: &'static str, a: NodeId) -> Result<(usize, usize, usize)> {
        match self.shape(a) {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::shape(op, &[s])),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", &[self.shape(a), self.shape(b)]));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("transpose", a)?;
        let out = kernels::transpose(self.value(a).data(), m, n);
        self.push("transpose", Tensor::new([n, m], out)?, Op::Transpose(a), &[a])
    }

    fn zip_with(&mut self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        self.same_shape(name, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(name, t, op, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        if !s.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        let out: Vec<f64> = self.value(a).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("scale", t, Op::Scale(a, s), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &[&base]));
        }
        let mut total = 0;
        for &i in inputs {
            let s = self.shape(i);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", &[&base, s]));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in inputs {
                let ext = self.shape(i)[axis];
                let d = self.value(i).data();
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        self.push(
            "concat",
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let cols = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        kernels::softmax_rows(&mut out, cols, None);
        let t = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", t, Op::Softmax(a), &[a])
    }

    /// Group normalization of a channel-first tensor `[C, ...]` with a
    /// per-channel affine transform.
    pub fn group_norm(&mut self, x: NodeId, groups: usize, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let c = shape[0];
        if groups == 0 || !c.is_multiple_of(groups) || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "group_norm",
                &[&shape, self.shape(gamma), self.shape(beta)],
            ));
        }
        let per_c: usize = shape[1..].iter().product();
        let gsize = (c / groups) * per_c;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![0.0; xd.len()];
        let mut mean = vec![0.0; groups];
        let mut rstd = vec![0.0; groups];
        for g in 0..groups {
            let seg = &xd[g * gsize..(g + 1) * gsize];
            let m = seg.iter().sum::<f64>() / gsize as f64;
            let var = seg.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / gsize as f64;
            let r = 1.0 / (var + EPS_NORM).sqrt();
            mean[g] = m;
            rstd[g] = r;
            for ch in 0..c / groups {
                let cidx = g * (c / groups) + ch;
                let off = cidx * per_c;
                for i in off..off + per_c {
                    out[i] = (xd[i] - m) * r * gd[cidx] + bd[cidx];
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            "group_norm",
            t,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Row-wise layer normalization of `[L, d]` with affine `[d]` parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (l, d) = self.dims2("layer_norm", x)?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                &[self.shape(x), self.shape(gamma), self.shape(beta)],
            ));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![0.0; l * d];
        let mut mean = vec![0.0; l];
        let mut rstd = vec![0.0; l];
        for r in 0..l {
            let row = &xd[r * d..(r + 1) * d];
            let m = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + EPS_NORM).sqrt();
            mean[r] = m;
            rstd[r] = rs;
            for j in 0..d {
                out[r * d + j] = (row[j] - m) * rs * gd[j] + bd[j];
            }
        }
        let t = Tensor::new([l, d], out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Sigmoid-linear unit `x * sigmoid(x)`.
    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&v| v * kernels::sigmoid(v))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("silu", t, Op::Silu(a), &[a])
    }

    /// 3x3 convolution with stride 1 and zero padding on `[Cin, H, W]`.
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (cin, h, wd) = self.dims3("conv3x3", x)?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != 3 || ws[3] != 3 || self.shape(b) != [ws[0]] {
            return Err(Error::shape("conv3x3", &[self.shape(x), &ws, self.shape(b)]));
        }
        let cout = ws[0];
        let out = kernels::conv3x3(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            cin,
            cout,
            h,
            wd,
        );
        let t = Tensor::new([cout, h, wd], out)?;
        self.push("conv3x3", t, Op::Conv3x3 { x, w, b }, &[x, w, b])
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.dims3("avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2", &[self.shape(x)]));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w;
                    let s = xd[base + 2 * y * w + 2 * xx]
                        + xd[base + 2 * y * w + 2 * xx + 1]
                        + xd[base + (2 * y + 1) * w + 2 * xx]
                        + xd[base + (2 * y + 1) * w + 2 * xx + 1];
                    out[ch * oh * ow + y * ow + xx] = 0.25 * s;
                }
            }
        }
        let t = Tensor::new([c, oh, ow], out)?;
        self.push("avg_pool2", t, Op::AvgPool2(x), &[x])
    }

    /// 2x nearest-neighbour upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.dims3("upsample2", x)?;
        let (oh, ow) = (2 * h, 2 * w);
        let xd = self.value(x).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[ch * oh * ow + y * ow + xx] = xd[ch * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new([c, oh, ow], out)?;
        self.push("upsample2", t, Op::Upsample2(x), &[x])
    }

    /// Scaled dot-product attention `softmax(q k^T / sqrt(d)) v`.
    ///
    /// `key_mask[j] == false` removes key `j` from every query's softmax. The
    /// normalized weights are kept on the node; see [`Graph::attention_weights`].
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, key_mask: Option<&[bool]>) -> Result<NodeId> {
        let (lq, d) = self.dims2("attention", q)?;
        let (lk, dk) = self.dims2("attention", k)?;
        let (lv, dv) = self.dims2("attention", v)?;
        if d != dk || lk != lv || key_mask.is_some_and(|m| m.len() != lk) {
            return Err(Error::shape(
                "attention",
                &[self.shape(q), self.shape(k), self.shape(v)],
            ));
        }
        if let Some(m) = key_mask {
            if !m.iter().any(|&b| b) {
                return Err(Error::InvalidArgument("attention mask removes every key".into()));
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut weights = vec![0.0; lq * lk];
        kernels::matmul_a_bt_acc(&mut weights, self.value(q).data(), self.value(k).data(), lq, d, lk);
        weights.iter_mut().for_each(|s| *s *= scale);
        kernels::softmax_rows(&mut weights, lk, key_mask);
        let mut out = vec![0.0; lq * dv];
        kernels::matmul_acc(&mut out, &weights, self.value(v).data(), lq, lk, dv);
        let t = Tensor::new([lq, dv], out)?;
        self.push(
            "attention",
            t,
            Op::Attention {
                q,
                k,
                v,
                scale,
                weights,
            },
            &[q, k, v],
        )
    }

    /// `x[L, n] + b[n]` applied to every row.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (l, n) = self.dims2("add_row_bias", x)?;
        if self.shape(b) != [n] {
            return Err(Error::shape("add_row_bias", &[self.shape(x), self.shape(b)]));
        }
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..l {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let t = Tensor::new([l, n], out)?;
        self.push("add_row_bias", t, Op::AddRowBias(x, b), &[x, b])
    }

    /// `x[C, ...] + b[C]` applied to every element of each channel.
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let c = shape[0];
        if self.shape(b) != [c] {
            return Err(Error::shape("add_channel_bias", &[&shape, self.shape(b)]));
        }
        let per: usize = shape[1..].iter().product();
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for ch in 0..c {
            out[ch * per..(ch + 1) * per].iter_mut().for_each(|v| *v += bd[ch]);
        }
        let t = Tensor::new(shape, out)?;
        self.push("add_channel_bias", t, Op::AddChannelBias(x, b), &[x, b])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len() as f64;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push("mse", Tensor::scalar(s), Op::Mse(a, b), &[a, b])
    }

    /// Selects rows of a `[V, d]` table.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2("gather_rows", table)?;
        if ids.is_empty() || ids.iter().any(|&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "row ids {ids:?} invalid for table with {v} rows"
            )));
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let t = Tensor::new([ids.len(), d], out)?;
        self.push(
            "gather_rows",
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// `x[L, in] * w[in, out] + b[out]`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], data: Vec<f64>) -> NodeId {
        g.leaf(Tensor::new(shape.to_vec(), data).unwrap(), true).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[3], vec![0.0; 3]);
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3)).unwrap();
        let a = leaf(&mut g, &[3, 2], vec![1.0, -2.0, 3.5, 0.25, 7.0, 9.0]);
        let y = g.matmul(i, a).unwrap();
        assert!(g.value(y).bit_eq(g.value(a)));
    }

    #[test]
    fn single_key_attention_returns_value() {
        let mut g = Graph::new();
        let row = vec![0.3, -1.2, 2.0];
        let q = leaf(&mut g, &[1, 3], row.clone());
        let k = leaf(&mut g, &[1, 3], row.clone());
        let v = leaf(&mut g, &[1, 3], row.clone());
        let y = g.attention(q, k, v, None).unwrap();
        assert_eq!(g.value(y).data(), &row[..]);
    }

    #[test]
    fn pool_then_upsample_is_identity_on_constants() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 4, 4], vec![1.75; 32]);
        let p = g.avg_pool2(x).unwrap();
        let u = g.upsample2(p).unwrap();
        assert!(g.value(u).bit_eq(g.value(x)));
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], vec![0.0; 6]);
        let b = leaf(&mut g, &[2, 3], vec![0.0; 6]);
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"), "{err}");
        let c = leaf(&mut g, &[3, 2], vec![0.0; 6]);
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut g = Graph::new();
        let t = Tensor::new([2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(g.leaf(t, true), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn masked_attention_ignores_masked_keys() {
        let mut g = Graph::new();
        let q = leaf(&mut g, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let k = leaf(&mut g, &[3, 2], vec![1.0, 1.0, 5.0, -5.0, 0.5, 0.5]);
        let v = leaf(&mut g, &[3, 1], vec![1.0, 100.0, 3.0]);
        let y = g.attention(q, k, v, Some(&[true, false, true])).unwrap();
        let (w, lq, lk) = g.attention_weights(y).unwrap();
        assert_eq!((lq, lk), (2, 3));
        for r in 0..2 {
            assert_eq!(w[r * 3 + 1], 0.0);
            assert!((w[r * 3] + w[r * 3 + 2] - 1.0).abs() < 1e-12);
        }
        assert!(g.value(y).data().iter().all(|&v| v < 3.0 + 1e-12));
        assert!(g.attention(q, k, v, Some(&[false; 3])).is_err());
    }

    #[test]
    fn requires_grad_propagates() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones([2])).unwrap();
        let b = leaf(&mut g, &[2], vec![1.0, 2.0]);
        let c = g.add(a, a).unwrap();
        let d = g.add(a, b).unwrap();
        assert!(!g.requires_grad(c));
        assert!(g.requires_grad(d));
    }

    #[test]
    fn concat_along_inner_axis() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 1], vec![1.0, 2.0]);
        let b = leaf(&mut g, &[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }
}
