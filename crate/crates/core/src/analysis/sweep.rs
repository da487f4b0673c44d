//! Growing-subset attribute sweep and concept evaluation.

use serde::{Deserialize, Serialize};

use super::embed::{cosine, text_similarity, vector_subject_similarity, Embedder};
use crate::conditioning::{wordlists, PLACEHOLDER};
use crate::diffusion::{ddim_sample, SamplerConfig, ToyModel};
use crate::error::{Error, Result};
use crate::inversion::InvertedConcept;
use crate::par;
use crate::tensor::Tensor;

/// A "color object, style" prompt split into its attribute terms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPrompt {
    pub color: String,
    pub object: String,
    pub style: String,
}

impl SweepPrompt {
    pub fn new(color: &str, object: &str, style: &str) -> Self {
        SweepPrompt {
            color: color.into(),
            object: object.into(),
            style: style.into(),
        }
    }

    pub fn text(&self) -> String {
        format!("{} {}, {}", self.color, self.object, self.style)
    }

    fn terms(&self) -> [&str; 3] {
        [&self.object, &self.color, &self.style]
    }
}

pub const ATTRIBUTES: [&str; 3] = ["object", "color", "style"];

/// Mean similarity of one attribute to the two prompts' terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSim {
    pub to_first: f64,
    pub to_second: f64,
}

impl AttributeSim {
    pub fn favors_second(&self) -> bool {
        self.to_second > self.to_first
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub subset: usize,
    /// Layers conditioned on the second prompt.
    pub layers: String,
    /// Object, color, style; `None` when the embedder failed on the row.
    pub attributes: Option<[AttributeSim; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSweepReport {
    pub rows: Vec<SweepRow>,
}

impl SubsetSweepReport {
    /// First subset index at which attribute `a` favors the second prompt.
    pub fn crossover(&self, a: usize) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.attributes.is_some_and(|s| s[a].favors_second()))
            .map(|r| r.subset)
    }

    /// Object crosses over no later than color; a missing crossover counts as
    /// after the last row.
    pub fn object_before_color(&self) -> bool {
        let end = self.rows.len();
        self.crossover(0).unwrap_or(end) <= self.crossover(1).unwrap_or(end)
    }
}

/// Images of one sweep, indexed `[subset][pair * seeds + seed]`.
pub type SweepImages = Vec<Vec<Tensor>>;

/// Conditions each growing subset on the second prompt of every pair and
/// the complement on the first, with the same seeds for every subset.
pub fn subset_sweep(
    model: &ToyModel,
    pairs: &[(SweepPrompt, SweepPrompt)],
    seeds: &[u64],
    sampler: &SamplerConfig,
    embedder: &dyn Embedder,
) -> Result<(SubsetSweepReport, SweepImages)> {
    if pairs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("subset sweep needs prompt pairs and seeds".into()));
    }
    let reg = model.registry();
    let subsets = reg.subset_sequence();
    let prompts = pairs
        .iter()
        .map(|(a, b)| Ok((model.plain_prompt(&a.text())?, model.plain_prompt(&b.text())?)))
        .collect::<Result<Vec<_>>>()?;
    let per_subset = pairs.len() * seeds.len();
    let images = par::try_map(subsets.len() * per_subset, |j| {
        let (si, rest) = (j / per_subset, j % per_subset);
        let (pi, seed) = (rest / seeds.len(), seeds[rest % seeds.len()]);
        let (p, q) = &prompts[pi];
        let mixed = p.mix_subset(q, &subsets[si])?;
        ddim_sample(model, &mixed, &SamplerConfig { seed, ..*sampler })
    })?;
    let images: SweepImages = images.chunks(per_subset).map(<[Tensor]>::to_vec).collect();
    let terms = pairs
        .iter()
        .map(|(a, b)| {
            let t = |s: &str| embedder.embed_text(s);
            Ok((
                a.terms().map(t).into_iter().collect::<Result<Vec<_>>>()?,
                b.terms().map(t).into_iter().collect::<Result<Vec<_>>>()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = subsets
        .iter()
        .enumerate()
        .map(|(si, sub)| {
            let scored: Result<[AttributeSim; 3]> = (|| {
                let mut acc = [AttributeSim {
                    to_first: 0.0,
                    to_second: 0.0,
                }; 3];
                for (k, img) in images[si].iter().enumerate() {
                    let v = embedder.embed_image(img)?;
                    let (ta, tb) = &terms[k / seeds.len()];
                    for a in 0..3 {
                        acc[a].to_first += cosine(&v, &ta[a]);
                        acc[a].to_second += cosine(&v, &tb[a]);
                    }
                }
                for s in &mut acc {
                    s.to_first /= per_subset as f64;
                    s.to_second /= per_subset as f64;
                }
                Ok(acc)
            })();
            if let Err(e) = &scored {
                log::warn!("subset {si}: embedder failed: {e}");
            }
            SweepRow {
                subset: si,
                layers: reg.describe(sub),
                attributes: scored.ok(),
            }
        })
        .collect();
    Ok((SubsetSweepReport { rows }, images))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptScore {
    pub prompt: String,
    pub text_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptEval {
    pub prompts: Vec<PromptScore>,
    pub text_mean: f64,
    pub subject_similarity: f64,
}

/// Samples `template` (containing the placeholder) with the concept for
/// every seed.
pub fn concept_samples(
    model: &ToyModel,
    concept: &InvertedConcept,
    template: &str,
    seeds: &[u64],
    sampler: &SamplerConfig,
) -> Result<Vec<Tensor>> {
    let p = concept.prompt(model, template)?;
    par::try_map(seeds.len(), |i| ddim_sample(model, &p, &SamplerConfig { seed: seeds[i], ..*sampler }))
}

/// Text similarity over the metric prompts, scored against `descriptor`
/// substituted for the placeholder, and subject similarity of the plain
/// "a photo of" samples against `references`.
pub fn evaluate_concept(
    model: &ToyModel,
    concept: &InvertedConcept,
    descriptor: &str,
    references: &[Tensor],
    seeds: &[u64],
    sampler: &SamplerConfig,
    embedder: &dyn Embedder,
) -> Result<ConceptEval> {
    let mut prompts = Vec::new();
    for tpl in wordlists::metric_prompts() {
        let imgs = concept_samples(model, concept, tpl, seeds, sampler)?;
        let text = tpl.replace(PLACEHOLDER, descriptor);
        prompts.push(PromptScore {
            prompt: tpl.to_string(),
            text_similarity: text_similarity(&imgs, &text, embedder)?,
        });
    }
    let text_mean = prompts.iter().map(|p| p.text_similarity).sum::<f64>() / prompts.len() as f64;
    let subject = subject_similarity_of(model, concept, references, seeds, sampler, embedder)?;
    Ok(ConceptEval {
        prompts,
        text_mean,
        subject_similarity: subject,
    })
}

/// Subject similarity of "a photo of <token>" samples against `references`.
pub fn subject_similarity_of(
    model: &ToyModel,
    concept: &InvertedConcept,
    references: &[Tensor],
    seeds: &[u64],
    sampler: &SamplerConfig,
    embedder: &dyn Embedder,
) -> Result<f64> {
    let imgs = concept_samples(model, concept, &format!("a photo of {PLACEHOLDER}"), seeds, sampler)?;
    let g = imgs.iter().map(|i| embedder.embed_image(i)).collect::<Result<Vec<_>>>()?;
    let r = references.iter().map(|i| embedder.embed_image(i)).collect::<Result<Vec<_>>>()?;
    vector_subject_similarity(&g, &r)
}
