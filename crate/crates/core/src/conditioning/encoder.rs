//! Token lookup table and a small pre-norm transformer text encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::LayerId;
use super::prompt::{ExtendedPrompt, LayerSpec, Override};
use super::vocab::PromptTemplate;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Token embedding width; also the width of the produced context.
    pub dim: usize,
    pub blocks: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

#[derive(Clone, Debug)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    cfg: EncoderConfig,
    table: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

impl TextEncoder {
    /// Registers the encoder's parameters on `store`.
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let table = store.add_normal("text.token_embedding", &[cfg.vocab_size, d], 1.0, rng);
        let pos = store.add_normal("text.position_embedding", &[cfg.max_len, d], 0.1, rng);
        let ws = 1.0 / (d as f64).sqrt();
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let p = |n: &str| format!("text.block{i}.{n}");
                Block {
                    ln1_g: store.add_ones(p("ln1.gamma"), &[d]),
                    ln1_b: store.add_zeros(p("ln1.beta"), &[d]),
                    wq: store.add_normal(p("attn.wq"), &[d, d], ws, rng),
                    bq: store.add_zeros(p("attn.bq"), &[d]),
                    wk: store.add_normal(p("attn.wk"), &[d, d], ws, rng),
                    bk: store.add_zeros(p("attn.bk"), &[d]),
                    wv: store.add_normal(p("attn.wv"), &[d, d], ws, rng),
                    bv: store.add_zeros(p("attn.bv"), &[d]),
                    wo: store.add_normal(p("attn.wo"), &[d, d], ws * 0.5, rng),
                    bo: store.add_zeros(p("attn.bo"), &[d]),
                    ln2_g: store.add_ones(p("ln2.gamma"), &[d]),
                    ln2_b: store.add_zeros(p("ln2.beta"), &[d]),
                    w1: store.add_normal(p("mlp.w1"), &[d, 2 * d], ws, rng),
                    b1: store.add_zeros(p("mlp.b1"), &[2 * d]),
                    w2: store.add_normal(p("mlp.w2"), &[2 * d, d], 0.5 / ((2 * d) as f64).sqrt(), rng),
                    b2: store.add_zeros(p("mlp.b2"), &[d]),
                }
            })
            .collect();
        TextEncoder {
            cfg,
            table,
            pos,
            blocks,
            lnf_g: store.add_ones("text.final_ln.gamma", &[d]),
            lnf_b: store.add_zeros("text.final_ln.beta", &[d]),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn table_param(&self) -> ParamId {
        self.table
    }

    /// Encodes one template into a `[max_len, dim]` context.
    ///
    /// When the template has a placeholder, `embedding` (shape `[dim]`) is
    /// substituted for the looked-up row at that slot.
    pub fn encode(
        &self,
        g: &mut Graph,
        b: &Binding,
        template: &PromptTemplate,
        embedding: Option<NodeId>,
    ) -> Result<NodeId> {
        let d = self.cfg.dim;
        if template.ids().len() != self.cfg.max_len {
            return Err(Error::shape("encode", &[&[template.ids().len()], &[self.cfg.max_len]]));
        }
        let table = b.node(self.table);
        let ids = template.ids();
        let rows = match (template.placeholder_slot(), embedding) {
            (None, None) => g.gather_rows(table, ids)?,
            (Some(slot), Some(e)) => {
                if g.shape(e) != [d] {
                    return Err(Error::shape("encode", &[g.shape(e), &[d]]));
                }
                let e = g.reshape(e, [1, d])?;
                let mut parts = Vec::with_capacity(3);
                if slot > 0 {
                    parts.push(g.gather_rows(table, &ids[..slot])?);
                }
                parts.push(e);
                if slot + 1 < ids.len() {
                    parts.push(g.gather_rows(table, &ids[slot + 1..])?);
                }
                g.concat(&parts, 0)?
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "embedding override supplied for a template without a placeholder slot".into(),
                ))
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "template has a placeholder but no embedding was supplied".into(),
                ))
            }
        };
        let mask = template.key_mask();
        let mut x = g.add(rows, b.node(self.pos))?;
        for blk in &self.blocks {
            let h = g.layer_norm(x, b.node(blk.ln1_g), b.node(blk.ln1_b))?;
            let q = g.linear(h, b.node(blk.wq), b.node(blk.bq))?;
            let k = g.linear(h, b.node(blk.wk), b.node(blk.bk))?;
            let v = g.linear(h, b.node(blk.wv), b.node(blk.bv))?;
            let a = g.attention(q, k, v, Some(&mask))?;
            let a = g.linear(a, b.node(blk.wo), b.node(blk.bo))?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, b.node(blk.ln2_g), b.node(blk.ln2_b))?;
            let h = g.linear(h, b.node(blk.w1), b.node(blk.b1))?;
            let h = g.silu(h)?;
            let h = g.linear(h, b.node(blk.w2), b.node(blk.b2))?;
            x = g.add(x, h)?;
        }
        g.layer_norm(x, b.node(self.lnf_g), b.node(self.lnf_b))
    }

    fn encode_spec(&self, g: &mut Graph, b: &Binding, spec: &LayerSpec) -> Result<NodeId> {
        let emb = match spec.embedding() {
            None => None,
            Some(Override::Node(n)) => Some(*n),
            Some(Override::Value(t)) => Some(g.constant(t.clone())?),
        };
        self.encode(g, b, spec.template(), emb)
    }

    /// Context for one registry layer.
    pub fn route(&self, g: &mut Graph, b: &Binding, p: &ExtendedPrompt, layer: &LayerId) -> Result<NodeId> {
        self.encode_spec(g, b, p.spec(layer)?)
    }

    /// Contexts for every registry layer, one encoder pass per distinct spec.
    pub fn encode_extended(&self, g: &mut Graph, b: &Binding, p: &ExtendedPrompt) -> Result<Vec<NodeId>> {
        let mut cache: Vec<(&LayerSpec, NodeId)> = Vec::new();
        let mut out = Vec::with_capacity(p.len());
        for spec in p.specs() {
            let hit = cache.iter().find(|(s, _)| s.same(spec)).map(|(_, n)| *n);
            let node = match hit {
                Some(n) => n,
                None => {
                    let n = self.encode_spec(g, b, spec)?;
                    cache.push((spec, n));
                    n
                }
            };
            out.push(node);
        }
        Ok(out)
    }
}

/// The token lookup table, split into natural rows and appended rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    rows: Tensor,
    natural: usize,
}

impl LookupTable {
    /// `natural` leading rows form the reference set of natural tokens.
    pub fn new(rows: Tensor, natural: usize) -> Result<Self> {
        let s = rows.shape();
        if s.len() != 2 || natural > s[0] {
            return Err(Error::InvalidArgument(format!(
                "lookup table of shape {s:?} cannot have {natural} natural rows"
            )));
        }
        Ok(LookupTable { rows, natural })
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.rows.data()[i * d..(i + 1) * d]
    }

    /// Rows of natural tokens only; appended rows are excluded.
    pub fn natural_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.natural).map(move |i| self.row(i))
    }

    pub fn natural_len(&self) -> usize {
        self.natural
    }

    /// Appends an optimized row; it is never part of the natural set.
    pub fn append_row(&mut self, row: &[f64]) -> Result<usize> {
        let d = self.dim();
        if row.len() != d {
            return Err(Error::shape("append_row", &[&[row.len()], &[d]]));
        }
        let mut data = std::mem::replace(&mut self.rows, Tensor::scalar(0.0)).into_data();
        data.extend_from_slice(row);
        let n = data.len() / d;
        self.rows = Tensor::new([n, d], data)?;
        Ok(n - 1)
    }
}
