//! Image/text embedders and the cosine similarity metrics built on them.

use crate::conditioning::vocab::split_words;
use crate::error::{Error, Result};
use crate::synthcorpus::attribute_scores;
use crate::synthcorpus::scene::{colors, shapes, textures};
use crate::tensor::Tensor;

/// Maps images and text into a shared space of unit vectors.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed_image(&self, img: &Tensor) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `v / |v|`; fails on the zero vector.
pub fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument("cannot normalize a zero or non-finite vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Attribute-space embedder built on the corpus oracle.
///
/// Layout: shape scores, color scores, texture scores, then one constant
/// dimension. Each attribute block is scaled to unit length so the three
/// attributes weigh equally. Text sets a one-hot entry for every known
/// shape, color or texture word; other words are ignored.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    shapes: Vec<&'static str>,
    colors: Vec<&'static str>,
    textures: Vec<&'static str>,
    /// Value of the constant dimension before normalization.
    pub bias: f64,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        ToyEmbedder {
            shapes: shapes(),
            colors: colors(),
            textures: textures(),
            bias: 0.1,
        }
    }
}

fn push_block(out: &mut Vec<f64>, block: &[f64]) {
    let n = block.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.extend(block.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }));
}

impl ToyEmbedder {
    /// Offsets of the shape, color and texture blocks.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        let (a, b, c) = (self.shapes.len(), self.colors.len(), self.textures.len());
        [0..a, a..a + b, a + b..a + b + c]
    }
}

impl Embedder for ToyEmbedder {
    fn dim(&self) -> usize {
        self.shapes.len() + self.colors.len() + self.textures.len() + 1
    }

    fn embed_image(&self, img: &Tensor) -> Result<Vec<f64>> {
        if img.shape().len() != 3 || img.shape()[0] != 3 {
            return Err(Error::ShapeMismatch {
                op: "embed_image",
                shapes: format!("{:?}", img.shape()),
            });
        }
        let sc = attribute_scores(img);
        let mut v = Vec::with_capacity(self.dim());
        for block in [&sc.shape, &sc.color, &sc.texture] {
            push_block(&mut v, &block.iter().map(|&(_, s)| s).collect::<Vec<_>>());
        }
        v.push(self.bias);
        unit(v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let words = split_words(text);
        let mut v = Vec::with_capacity(self.dim());
        for names in [&self.shapes, &self.colors, &self.textures] {
            let block: Vec<f64> = names
                .iter()
                .map(|n| f64::from(u8::from(words.iter().any(|w| w == n))))
                .collect();
            push_block(&mut v, &block);
        }
        v.push(self.bias);
        unit(v)
    }
}

/// Mean cosine between each image and the prompt text.
pub fn text_similarity(images: &[Tensor], prompt: &str, embedder: &dyn Embedder) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("text similarity needs at least one image".into()));
    }
    let t = embedder.embed_text(prompt)?;
    let mut s = 0.0;
    for img in images {
        s += cosine(&embedder.embed_image(img)?, &t);
    }
    Ok(s / images.len() as f64)
}

/// Mean cosine over all (generated, reference) pairs.
pub fn subject_similarity(generated: &[Tensor], references: &[Tensor], embedder: &dyn Embedder) -> Result<f64> {
    if generated.is_empty() || references.is_empty() {
        return Err(Error::InvalidArgument("subject similarity needs two nonempty image sets".into()));
    }
    let g = generated.iter().map(|i| embedder.embed_image(i)).collect::<Result<Vec<_>>>()?;
    let r = references.iter().map(|i| embedder.embed_image(i)).collect::<Result<Vec<_>>>()?;
    vector_subject_similarity(&g, &r)
}

/// [`subject_similarity`] on precomputed embeddings.
pub fn vector_subject_similarity(generated: &[Vec<f64>], references: &[Vec<f64>]) -> Result<f64> {
    if generated.is_empty() || references.is_empty() {
        return Err(Error::InvalidArgument("subject similarity needs two nonempty sets".into()));
    }
    let mut s = 0.0;
    for a in generated {
        for b in references {
            s += cosine(a, b);
        }
    }
    Ok(s / (generated.len() * references.len()) as f64)
}
