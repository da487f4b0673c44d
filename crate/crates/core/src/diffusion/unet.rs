//! Miniature U-net with one cross-attention layer per registry entry.

use rand::Rng;

use super::config::UNetConfig;
use crate::conditioning::{Direction, LayerId};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Debug)]
struct ResBlock {
    cin: usize,
    cout: usize,
    gn1_g: ParamId,
    gn1_b: ParamId,
    conv1_w: ParamId,
    conv1_b: ParamId,
    temb_w: ParamId,
    temb_b: ParamId,
    gn2_g: ParamId,
    gn2_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    /// 1x1 projection when the channel count changes.
    skip: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
struct Head {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

#[derive(Clone, Debug)]
struct CrossAttn {
    layer: LayerId,
    gn_g: ParamId,
    gn_b: ParamId,
    heads: Vec<Head>,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
struct UpBlock {
    res: ResBlock,
    attn: Option<CrossAttn>,
}

#[derive(Clone, Debug)]
struct Level {
    down: Vec<(ResBlock, CrossAttn)>,
    up: Vec<UpBlock>,
}

/// Conditioning for one cross-attention layer: encoded context and key mask.
#[derive(Clone, Debug)]
pub struct LayerContext {
    pub node: NodeId,
    pub mask: Vec<bool>,
}

/// Result of one U-net pass.
#[derive(Clone, Debug)]
pub struct UNetOutput {
    pub eps: NodeId,
    /// Attention nodes per registry layer, one per head.
    pub attention: Vec<Vec<NodeId>>,
}

#[derive(Clone, Debug)]
pub struct UNet {
    cfg: UNetConfig,
    conv_in_w: ParamId,
    conv_in_b: ParamId,
    time_w1: ParamId,
    time_b1: ParamId,
    time_w2: ParamId,
    time_b2: ParamId,
    levels: Vec<Level>,
    mid1: ResBlock,
    mid_attn: CrossAttn,
    mid2: ResBlock,
    out_gn_g: ParamId,
    out_gn_b: ParamId,
    conv_out_w: ParamId,
    conv_out_b: ParamId,
}

fn conv_w(store: &mut ParamStore, name: String, cout: usize, cin: usize, rng: &mut impl Rng) -> ParamId {
    let std = (2.0 / (9 * cin) as f64).sqrt();
    store.add_normal(name, &[cout, cin, 3, 3], std, rng)
}

fn dense(store: &mut ParamStore, name: String, i: usize, o: usize, rng: &mut impl Rng) -> ParamId {
    store.add_normal(name, &[i, o], 1.0 / (i as f64).sqrt(), rng)
}

impl ResBlock {
    fn new(store: &mut ParamStore, p: &str, cin: usize, cout: usize, tdim: usize, rng: &mut impl Rng) -> Self {
        let n = |s: &str| format!("{p}.{s}");
        ResBlock {
            cin,
            cout,
            gn1_g: store.add_ones(n("gn1.gamma"), &[cin]),
            gn1_b: store.add_zeros(n("gn1.beta"), &[cin]),
            conv1_w: conv_w(store, n("conv1.w"), cout, cin, rng),
            conv1_b: store.add_zeros(n("conv1.b"), &[cout]),
            temb_w: dense(store, n("temb.w"), tdim, cout, rng),
            temb_b: store.add_zeros(n("temb.b"), &[cout]),
            gn2_g: store.add_ones(n("gn2.gamma"), &[cout]),
            gn2_b: store.add_zeros(n("gn2.beta"), &[cout]),
            conv2_w: conv_w(store, n("conv2.w"), cout, cout, rng),
            conv2_b: store.add_zeros(n("conv2.b"), &[cout]),
            skip: (cin != cout).then(|| {
                (
                    store.add_normal(n("skip.w"), &[cout, cin], 1.0 / (cin as f64).sqrt(), rng),
                    store.add_zeros(n("skip.b"), &[cout]),
                )
            }),
        }
    }

    fn forward(&self, g: &mut Graph, b: &Binding, x: NodeId, temb: NodeId, groups: usize) -> Result<NodeId> {
        let h = g.group_norm(x, groups, b.node(self.gn1_g), b.node(self.gn1_b))?;
        let h = g.silu(h)?;
        let h = g.conv3x3(h, b.node(self.conv1_w), b.node(self.conv1_b))?;
        let t = g.linear(temb, b.node(self.temb_w), b.node(self.temb_b))?;
        let t = g.reshape(t, [self.cout])?;
        let h = g.add_channel_bias(h, t)?;
        let h = g.group_norm(h, groups, b.node(self.gn2_g), b.node(self.gn2_b))?;
        let h = g.silu(h)?;
        let h = g.conv3x3(h, b.node(self.conv2_w), b.node(self.conv2_b))?;
        let s = match self.skip {
            None => x,
            Some((w, bias)) => {
                let shape = g.shape(x).to_vec();
                let flat = g.reshape(x, [self.cin, shape[1] * shape[2]])?;
                let y = g.matmul(b.node(w), flat)?;
                let y = g.add_channel_bias(y, b.node(bias))?;
                g.reshape(y, [self.cout, shape[1], shape[2]])?
            }
        };
        g.add(h, s)
    }
}

impl CrossAttn {
    fn new(store: &mut ParamStore, layer: LayerId, c: usize, cfg: &UNetConfig, rng: &mut impl Rng) -> Self {
        let p = format!("unet.attn{layer}");
        let n = |s: &str| format!("{p}.{s}");
        let heads = (0..cfg.heads)
            .map(|h| Head {
                wq: dense(store, n(&format!("head{h}.wq")), c, cfg.head_dim, rng),
                wk: dense(store, n(&format!("head{h}.wk")), cfg.text_dim, cfg.head_dim, rng),
                wv: dense(store, n(&format!("head{h}.wv")), cfg.text_dim, cfg.head_dim, rng),
            })
            .collect();
        CrossAttn {
            layer,
            gn_g: store.add_ones(n("gn.gamma"), &[c]),
            gn_b: store.add_zeros(n("gn.beta"), &[c]),
            heads,
            wo: dense(store, n("wo"), cfg.heads * cfg.head_dim, c, rng),
            bo: store.add_zeros(n("bo"), &[c]),
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: NodeId,
        ctx: &LayerContext,
        groups: usize,
        attn_out: &mut Vec<NodeId>,
    ) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let h = g.group_norm(x, groups, b.node(self.gn_g), b.node(self.gn_b))?;
        let h = g.reshape(h, [c, hw])?;
        let h = g.transpose(h)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.matmul(h, b.node(head.wq))?;
            let k = g.matmul(ctx.node, b.node(head.wk))?;
            let v = g.matmul(ctx.node, b.node(head.wv))?;
            let a = g.attention(q, k, v, Some(&ctx.mask))?;
            attn_out.push(a);
            outs.push(a);
        }
        let o = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let o = g.linear(o, b.node(self.wo), b.node(self.bo))?;
        let o = g.transpose(o)?;
        let o = g.reshape(o, shape)?;
        g.add(x, o)
    }
}

/// Assumed pixel standard deviation of training images.
pub const SIGMA_DATA: f64 = 0.5;

/// Sinusoidal features of a timestep, `[1, dim]`.
pub fn timestep_features(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        v[i] = a.sin();
        v[half + i] = a.cos();
    }
    Tensor::new([1, dim], v).expect("shape")
}

impl UNet {
    pub fn new(cfg: &UNetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let td = cfg.time_dim;
        let c0 = cfg.levels[0].channels;
        let conv_in_w = conv_w(store, "unet.conv_in.w".into(), c0, 3, rng);
        let conv_in_b = store.add_zeros("unet.conv_in.b", &[c0]);
        let time_w1 = dense(store, "unet.time.w1".into(), td, td, rng);
        let time_b1 = store.add_zeros("unet.time.b1", &[td]);
        let time_w2 = dense(store, "unet.time.w2".into(), td, td, rng);
        let time_b2 = store.add_zeros("unet.time.b2", &[td]);

        let mut levels = Vec::new();
        let mut skip_ch = vec![c0];
        let mut ch = c0;
        for (li, l) in cfg.levels.iter().enumerate() {
            let mut down = Vec::new();
            if li > 0 {
                skip_ch.push(ch);
            }
            for i in 0..l.down_blocks {
                let r = ResBlock::new(store, &format!("unet.down{li}.res{i}"), ch, l.channels, td, rng);
                ch = l.channels;
                let a = CrossAttn::new(store, LayerId::new(l.label, Direction::Down, i as u32), ch, cfg, rng);
                down.push((r, a));
                skip_ch.push(ch);
            }
            levels.push(Level { down, up: Vec::new() });
        }
        let cm = cfg.mid_channels;
        let mid1 = ResBlock::new(store, "unet.mid.res0", ch, cm, td, rng);
        let mid_attn = CrossAttn::new(
            store,
            LayerId::new(cfg.mid_label, Direction::Down, 0),
            cm,
            cfg,
            rng,
        );
        let mid2 = ResBlock::new(store, "unet.mid.res1", cm, cm, td, rng);
        ch = cm;
        for (li, l) in cfg.levels.iter().enumerate().rev() {
            let mut up = Vec::new();
            for i in 0..=l.down_blocks {
                let s = skip_ch.pop().expect("skip count");
                let res = ResBlock::new(store, &format!("unet.up{li}.res{i}"), ch + s, l.channels, td, rng);
                ch = l.channels;
                let attn = (i < l.up_attn).then(|| {
                    CrossAttn::new(store, LayerId::new(l.label, Direction::Up, i as u32), ch, cfg, rng)
                });
                up.push(UpBlock { res, attn });
            }
            levels[li].up = up;
        }
        let out_gn_g = store.add_ones("unet.out.gn.gamma", &[ch]);
        let out_gn_b = store.add_zeros("unet.out.gn.beta", &[ch]);
        let conv_out_w = store.add_normal("unet.conv_out.w", &[3, ch, 3, 3], 0.1 / ((9 * ch) as f64).sqrt(), rng);
        let conv_out_b = store.add_zeros("unet.conv_out.b", &[3]);
        Ok(UNet {
            cfg: cfg.clone(),
            conv_in_w,
            conv_in_b,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            levels,
            mid1,
            mid_attn,
            mid2,
            out_gn_g,
            out_gn_b,
            conv_out_w,
            conv_out_b,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Predicts the noise in `x` (`[3, S, S]`) at timestep `t` with cumulative
    /// signal level `alpha_bar`. `contexts[i]` conditions the i-th registry
    /// layer.
    ///
    /// The network sees `x` rescaled to unit variance and predicts a residual
    /// on top of `c_skip * x`, the best linear noise estimate for data of
    /// standard deviation [`SIGMA_DATA`]. Without the skip, small errors at
    /// large `t` blow up in the implied clean image and sampling drifts.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: NodeId,
        t: usize,
        alpha_bar: f64,
        contexts: &[LayerContext],
    ) -> Result<UNetOutput> {
        let s = self.cfg.image_size;
        if g.shape(x) != [3, s, s] {
            return Err(Error::shape("unet", &[g.shape(x), &[3, s, s]]));
        }
        let n_layers = self.cfg.layer_ids().len();
        if contexts.len() != n_layers {
            return Err(Error::RegistryMismatch(format!(
                "{} contexts for {} cross-attention layers",
                contexts.len(),
                n_layers
            )));
        }
        let groups = self.cfg.groups;
        let var = alpha_bar * SIGMA_DATA * SIGMA_DATA + 1.0 - alpha_bar;
        let c_in = 1.0 / var.sqrt();
        let c_skip = (1.0 - alpha_bar).sqrt() / var;
        let x_in = g.scale(x, c_in)?;
        let tf = g.constant(timestep_features(t, self.cfg.time_dim))?;
        let temb = g.linear(tf, b.node(self.time_w1), b.node(self.time_b1))?;
        let temb = g.silu(temb)?;
        let temb = g.linear(temb, b.node(self.time_w2), b.node(self.time_b2))?;
        let temb = g.silu(temb)?;

        let mut attention: Vec<Vec<NodeId>> = vec![Vec::new(); n_layers];
        let mut li_ctx = 0;
        let mut h = g.conv3x3(x_in, b.node(self.conv_in_w), b.node(self.conv_in_b))?;
        let mut skips = vec![h];
        for (li, level) in self.levels.iter().enumerate() {
            if li > 0 {
                h = g.avg_pool2(h)?;
                skips.push(h);
            }
            for (r, a) in &level.down {
                h = r.forward(g, b, h, temb, groups)?;
                h = a.forward(g, b, h, &contexts[li_ctx], groups, &mut attention[li_ctx])?;
                li_ctx += 1;
                skips.push(h);
            }
        }
        h = g.avg_pool2(h)?;
        h = self.mid1.forward(g, b, h, temb, groups)?;
        h = self
            .mid_attn
            .forward(g, b, h, &contexts[li_ctx], groups, &mut attention[li_ctx])?;
        li_ctx += 1;
        h = self.mid2.forward(g, b, h, temb, groups)?;
        for level in self.levels.iter().rev() {
            h = g.upsample2(h)?;
            for blk in &level.up {
                let s = skips.pop().expect("skip count");
                let cat = g.concat(&[h, s], 0)?;
                h = blk.res.forward(g, b, cat, temb, groups)?;
                if let Some(a) = &blk.attn {
                    h = a.forward(g, b, h, &contexts[li_ctx], groups, &mut attention[li_ctx])?;
                    li_ctx += 1;
                }
            }
        }
        debug_assert!(skips.is_empty() && li_ctx == n_layers);
        h = g.group_norm(h, groups, b.node(self.out_gn_g), b.node(self.out_gn_b))?;
        h = g.silu(h)?;
        let r = g.conv3x3(h, b.node(self.conv_out_w), b.node(self.conv_out_b))?;
        let skip = g.scale(x, c_skip)?;
        let eps = g.add(r, skip)?;
        Ok(UNetOutput { eps, attention })
    }

    /// Layer names of the instantiated cross-attention modules, in visit order.
    pub fn attention_layers(&self) -> Vec<LayerId> {
        let mut v: Vec<LayerId> = Vec::new();
        for l in &self.levels {
            v.extend(l.down.iter().map(|(_, a)| a.layer));
        }
        v.push(self.mid_attn.layer);
        for l in self.levels.iter().rev() {
            v.extend(l.up.iter().filter_map(|u| u.attn.as_ref().map(|a| a.layer)));
        }
        v
    }
}
