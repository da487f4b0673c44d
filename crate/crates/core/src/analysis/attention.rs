//! Cross-attention mass on object vs appearance tokens, per layer.

use serde::{Deserialize, Serialize};

use crate::conditioning::{ExtendedPrompt, LayerId, LayerRegistry, LayerSpec, PromptTemplate, BOS, EOS, PAD};
use crate::diffusion::{ddim_sample_observed, SamplerConfig, ToyModel};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Object,
    Appearance,
    Other,
    /// BOS, EOS and PAD.
    Special,
}

/// Per-token attention mass of one layer at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layer: LayerId,
    pub timestep: usize,
    /// Mean over heads, then over spatial queries.
    pub mass: Vec<f64>,
    pub roles: Vec<TokenRole>,
}

impl AttentionRecord {
    /// Reduces row-stochastic `[queries, keys]` weight matrices, one per head.
    pub fn from_heads(
        layer: LayerId,
        timestep: usize,
        heads: &[(&[f64], usize, usize)],
        roles: Vec<TokenRole>,
    ) -> Result<Self> {
        let keys = roles.len();
        if heads.is_empty() {
            return Err(Error::InvalidArgument("attention record needs at least one head".into()));
        }
        let mut mass = vec![0.0; keys];
        for &(w, q, k) in heads {
            if k != keys || w.len() != q * k || q == 0 {
                return Err(Error::ShapeMismatch {
                    op: "attention_record",
                    shapes: format!("weights {q}x{k} ({} values) for {keys} tokens", w.len()),
                });
            }
            let mut head = vec![0.0; keys];
            for row in w.chunks_exact(k) {
                for (h, v) in head.iter_mut().zip(row) {
                    *h += v;
                }
            }
            for (m, h) in mass.iter_mut().zip(head) {
                *m += h / q as f64;
            }
        }
        mass.iter_mut().for_each(|m| *m /= heads.len() as f64);
        Ok(AttentionRecord {
            layer,
            timestep,
            mass,
            roles,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanReduce {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioOptions {
    /// Keep BOS/EOS mass in the normalization.
    pub include_special: bool,
    pub span: SpanReduce,
}

impl Default for RatioOptions {
    fn default() -> Self {
        RatioOptions {
            include_special: false,
            span: SpanReduce::Mean,
        }
    }
}

/// Mass of the `role` span after optional special-token renormalization;
/// `None` when the span is empty.
pub fn span_mass(rec: &AttentionRecord, role: TokenRole, opts: RatioOptions) -> Option<f64> {
    let keep = |r: TokenRole| opts.include_special || r != TokenRole::Special;
    let total: f64 = rec.mass.iter().zip(&rec.roles).filter(|(_, &r)| keep(r)).map(|(m, _)| m).sum();
    let idx: Vec<usize> = (0..rec.roles.len()).filter(|&i| rec.roles[i] == role).collect();
    if idx.is_empty() || total <= 0.0 {
        return None;
    }
    let s: f64 = idx.iter().map(|&i| rec.mass[i]).sum::<f64>() / total;
    Some(match opts.span {
        SpanReduce::Sum => s,
        SpanReduce::Mean => s / idx.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRatio {
    pub layer: String,
    pub coarse: bool,
    pub object_mass: f64,
    pub appearance_mass: f64,
    /// `None` when no record reached the layer.
    pub ratio: Option<f64>,
    pub records: usize,
}

/// Averages span masses over all records of each layer, then divides.
pub fn ratio_table(registry: &LayerRegistry, records: &[AttentionRecord], opts: RatioOptions) -> Result<Vec<LayerRatio>> {
    let n = registry.len();
    let mut obj = vec![0.0; n];
    let mut app = vec![0.0; n];
    let mut count = vec![0usize; n];
    for r in records {
        let i = registry.position(&r.layer)?;
        if let (Some(o), Some(a)) = (span_mass(r, TokenRole::Object, opts), span_mass(r, TokenRole::Appearance, opts)) {
            obj[i] += o;
            app[i] += a;
            count[i] += 1;
        }
    }
    Ok(registry
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c = count[i].max(1) as f64;
            let (o, a) = (obj[i] / c, app[i] / c);
            LayerRatio {
                layer: l.to_string(),
                coarse: l.is_coarse(),
                object_mass: o,
                appearance_mass: a,
                ratio: (count[i] > 0 && a > 0.0).then(|| o / a),
                records: count[i],
            }
        })
        .collect())
}

/// The two caption orders of the analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// "appearance object"
    AppearanceObject,
    /// "object, appearance"
    ObjectAppearance,
}

impl Pattern {
    pub const BOTH: [Pattern; 2] = [Pattern::AppearanceObject, Pattern::ObjectAppearance];

    pub fn text(self, appearance: &str, object: &str) -> String {
        match self {
            Pattern::AppearanceObject => format!("{appearance} {object}"),
            Pattern::ObjectAppearance => format!("{object}, {appearance}"),
        }
    }
}

/// Tokenizes a pattern and labels every key position.
pub fn labeled_prompt(
    model: &ToyModel,
    appearance: &str,
    object: &str,
    pattern: Pattern,
) -> Result<(PromptTemplate, Vec<TokenRole>)> {
    let t = model.tokenize(&pattern.text(appearance, object))?;
    let app_len = model.tokenize(appearance)?.content_len() - 2;
    let obj_len = model.tokenize(object)?.content_len() - 2;
    let (a0, o0) = match pattern {
        Pattern::AppearanceObject => (1, 1 + app_len),
        Pattern::ObjectAppearance => (2 + obj_len, 1),
    };
    let roles = t
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            if id == BOS || id == EOS || id == PAD {
                TokenRole::Special
            } else if (a0..a0 + app_len).contains(&i) {
                TokenRole::Appearance
            } else if (o0..o0 + obj_len).contains(&i) {
                TokenRole::Object
            } else {
                TokenRole::Other
            }
        })
        .collect();
    Ok((t, roles))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub rows: Vec<LayerRatio>,
    pub coarse_mean: f64,
    pub fine_mean: f64,
    pub prompts_used: usize,
    pub prompts_skipped: usize,
}

impl RatioReport {
    pub fn coarse_exceeds_fine(&self) -> bool {
        self.coarse_mean > self.fine_mean
    }
}

fn mean_ratio<'a>(rows: impl Iterator<Item = &'a LayerRatio>) -> f64 {
    let v: Vec<f64> = rows.filter_map(|r| r.ratio).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Samples every `(appearance, object)` pair in both caption orders for each
/// seed and reduces the conditional branch's cross-attention.
pub fn attention_ratio(
    model: &ToyModel,
    pairs: &[(String, String)],
    seeds: &[u64],
    sampler: &SamplerConfig,
    opts: RatioOptions,
) -> Result<RatioReport> {
    let mut prompts = Vec::new();
    let mut skipped = 0;
    for (app, obj) in pairs {
        for pat in Pattern::BOTH {
            match labeled_prompt(model, app, obj, pat) {
                Ok((t, roles))
                    if roles.contains(&TokenRole::Object) && roles.contains(&TokenRole::Appearance) =>
                {
                    prompts.push((t, roles))
                }
                Ok(_) => {
                    log::warn!("skipping {:?}: missing object or appearance span", pat.text(app, obj));
                    skipped += 1;
                }
                Err(e) => {
                    log::warn!("skipping {:?}: {e}", pat.text(app, obj));
                    skipped += 1;
                }
            }
        }
    }
    let layers = model.registry().layers().to_vec();
    let jobs: Vec<(usize, u64)> = (0..prompts.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    let per_job = par::try_map(jobs.len(), |j| {
        let (pi, seed) = jobs[j];
        let (t, roles) = &prompts[pi];
        let p = ExtendedPrompt::broadcast(model.registry(), LayerSpec::plain(t.clone())?);
        let cfg = SamplerConfig { seed, ..*sampler };
        let mut recs = Vec::new();
        let mut err = None;
        ddim_sample_observed(model, &p, &cfg, &mut |ts, g, out| {
            for (li, heads) in out.attention.iter().enumerate() {
                let w: Vec<_> = heads.iter().filter_map(|&h| g.attention_weights(h)).collect();
                match AttentionRecord::from_heads(layers[li], ts, &w, roles.clone()) {
                    Ok(r) => recs.push(r),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(recs),
        }
    })?;
    let records: Vec<AttentionRecord> = per_job.into_iter().flatten().collect();
    let rows = ratio_table(model.registry(), &records, opts)?;
    Ok(RatioReport {
        coarse_mean: mean_ratio(rows.iter().filter(|r| r.coarse)),
        fine_mean: mean_ratio(rows.iter().filter(|r| !r.coarse)),
        rows,
        prompts_used: prompts.len(),
        prompts_skipped: skipped,
    })
}
