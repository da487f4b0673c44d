//! Single and extended (per-layer) prompts, and layer-wise mixing.

use serde::{Deserialize, Serialize};

use super::layers::{LayerId, LayerRegistry, LayerSubset};
use super::vocab::PromptTemplate;
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tensor};

/// Embedding substituted at a template's placeholder slot.
#[derive(Clone, Debug)]
pub enum Override {
    /// A fixed vector of length `d`.
    Value(Tensor),
    /// A node on the graph being built, e.g. a trainable leaf during inversion.
    Node(NodeId),
}

impl Override {
    /// Identity used for memoizing encoder passes: equal bits or the same node.
    pub fn same(&self, other: &Override) -> bool {
        match (self, other) {
            (Override::Value(a), Override::Value(b)) => a.bit_eq(b),
            (Override::Node(a), Override::Node(b)) => a == b,
            _ => false,
        }
    }
}

/// Conditioning for one cross-attention layer.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    template: PromptTemplate,
    embedding: Option<Override>,
}

impl LayerSpec {
    /// The override must be present exactly when the template has a placeholder.
    pub fn new(template: PromptTemplate, embedding: Option<Override>) -> Result<Self> {
        match (template.has_placeholder(), embedding.is_some()) {
            (true, false) => Err(Error::InvalidArgument(
                "template has a placeholder but no embedding was supplied".into(),
            )),
            (false, true) => Err(Error::InvalidArgument(
                "embedding override supplied for a template without a placeholder slot".into(),
            )),
            _ => Ok(LayerSpec {
                template,
                embedding,
            }),
        }
    }

    pub fn plain(template: PromptTemplate) -> Result<Self> {
        Self::new(template, None)
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn embedding(&self) -> Option<&Override> {
        self.embedding.as_ref()
    }

    pub fn same(&self, other: &LayerSpec) -> bool {
        self.template == other.template
            && match (&self.embedding, &other.embedding) {
                (None, None) => true,
                (Some(a), Some(b)) => a.same(b),
                _ => false,
            }
    }
}

/// One conditioning spec per registry layer.
#[derive(Clone, Debug)]
pub struct ExtendedPrompt {
    registry: LayerRegistry,
    specs: Vec<LayerSpec>,
}

impl ExtendedPrompt {
    pub fn new(registry: LayerRegistry, specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.len() != registry.len() {
            return Err(Error::RegistryMismatch(format!(
                "{} layer specs for a registry of {} layers",
                specs.len(),
                registry.len()
            )));
        }
        Ok(ExtendedPrompt { registry, specs })
    }

    /// The same spec at every layer; this is how an ordinary prompt lives in P+.
    pub fn broadcast(registry: &LayerRegistry, spec: LayerSpec) -> Self {
        ExtendedPrompt {
            specs: vec![spec; registry.len()],
            registry: registry.clone(),
        }
    }

    pub fn registry(&self) -> &LayerRegistry {
        &self.registry
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn spec(&self, layer: &LayerId) -> Result<&LayerSpec> {
        Ok(&self.specs[self.registry.position(layer)?])
    }

    /// Replaces the spec of a single layer.
    pub fn with_layer(mut self, layer: &LayerId, spec: LayerSpec) -> Result<Self> {
        let i = self.registry.position(layer)?;
        self.specs[i] = spec;
        Ok(self)
    }

    pub fn is_broadcast(&self) -> bool {
        self.specs.windows(2).all(|w| w[0].same(&w[1]))
    }

    pub fn layerwise_eq(&self, other: &ExtendedPrompt) -> bool {
        self.registry == other.registry
            && self.specs.iter().zip(&other.specs).all(|(a, b)| a.same(b))
    }

    fn check_same_registry(&self, other: &ExtendedPrompt) -> Result<()> {
        if self.registry != other.registry {
            return Err(Error::RegistryMismatch(
                "extended prompts were built against different registries".into(),
            ));
        }
        Ok(())
    }

    /// Layers in `subset` take `other`'s spec; the rest keep `self`'s.
    pub fn mix_subset(&self, other: &ExtendedPrompt, subset: &LayerSubset) -> Result<Self> {
        self.check_same_registry(other)?;
        for l in subset.layers() {
            self.registry.position(l)?;
        }
        let specs = self
            .registry
            .layers()
            .iter()
            .zip(self.specs.iter().zip(&other.specs))
            .map(|(l, (p, q))| if subset.contains(l) { q.clone() } else { p.clone() })
            .collect();
        Ok(ExtendedPrompt {
            registry: self.registry.clone(),
            specs,
        })
    }
}

/// Separators `k < K` selecting the 1-based layer positions `k+1..=K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub k: usize,
    #[serde(rename = "K")]
    pub big_k: usize,
}

impl MixSpec {
    pub fn new(k: usize, big_k: usize, n: usize) -> Result<Self> {
        if !(1 <= k && k < big_k && big_k <= n) {
            return Err(Error::InvalidArgument(format!(
                "mix separators need 1 <= k < K <= {n}, got k={k}, K={big_k}"
            )));
        }
        Ok(MixSpec { k, big_k })
    }

    /// Registry layers carried by the second prompt.
    pub fn subset(&self, registry: &LayerRegistry) -> LayerSubset {
        registry.range(self.k, self.big_k - 1)
    }

    /// Separators covering a contiguous subset, if it is one.
    pub fn from_subset(subset: &LayerSubset, registry: &LayerRegistry) -> Result<Self> {
        let pos = subset
            .layers()
            .iter()
            .map(|l| registry.position(l))
            .collect::<Result<Vec<_>>>()?;
        match (pos.first(), pos.last()) {
            (Some(&a), Some(&b)) if b - a + 1 == pos.len() && a >= 1 => {
                MixSpec::new(a, b + 1, registry.len())
            }
            _ => Err(Error::InvalidLayerRange(registry.describe(subset))),
        }
    }
}

/// `{p_1..p_k, q_(k+1)..q_K, p_(K+1)..p_n}`
pub fn mix_extended(p: &ExtendedPrompt, q: &ExtendedPrompt, spec: MixSpec) -> Result<ExtendedPrompt> {
    p.check_same_registry(q)?;
    let spec = MixSpec::new(spec.k, spec.big_k, p.len())?;
    p.mix_subset(q, &spec.subset(p.registry()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::Vocabulary;

    fn prompts() -> (ExtendedPrompt, ExtendedPrompt, LayerRegistry) {
        let v = Vocabulary::toy();
        let r = LayerRegistry::reference();
        let p = ExtendedPrompt::broadcast(&r, LayerSpec::plain(v.tokenize("red cube").unwrap()).unwrap());
        let q = ExtendedPrompt::broadcast(&r, LayerSpec::plain(v.tokenize("green dog").unwrap()).unwrap());
        (p, q, r)
    }

    #[test]
    fn mix_with_itself_is_identity() {
        let (p, _, r) = prompts();
        for k in 1..r.len() {
            for big_k in k + 1..=r.len() {
                let m = mix_extended(&p, &p, MixSpec::new(k, big_k, r.len()).unwrap()).unwrap();
                assert!(m.layerwise_eq(&p));
            }
        }
    }

    #[test]
    fn boundary_separators() {
        let (p, q, r) = prompts();
        let m = mix_extended(&p, &q, MixSpec::new(1, 16, 16).unwrap()).unwrap();
        assert!(m.specs()[0].same(&p.specs()[0]));
        for i in 1..16 {
            assert!(m.specs()[i].same(&q.specs()[i]));
        }
        assert!(MixSpec::new(0, 3, 16).is_err());
        assert!(MixSpec::new(3, 3, 16).is_err());
        assert!(MixSpec::new(3, 17, 16).is_err());
        let _ = r;
    }

    #[test]
    fn override_requires_placeholder() {
        let v = Vocabulary::toy();
        let e = Override::Value(Tensor::zeros([4]));
        assert!(LayerSpec::new(v.tokenize("a cat").unwrap(), Some(e.clone())).is_err());
        assert!(LayerSpec::new(v.tokenize("a <token>").unwrap(), None).is_err());
        assert!(LayerSpec::new(v.tokenize("a <token>").unwrap(), Some(e)).is_ok());
    }

    #[test]
    fn registry_mismatch_rejected() {
        let (p, _, _) = prompts();
        let v = Vocabulary::toy();
        let small = LayerRegistry::new(LayerRegistry::reference().layers()[..4].to_vec()).unwrap();
        let q = ExtendedPrompt::broadcast(&small, LayerSpec::plain(v.tokenize("a cat").unwrap()).unwrap());
        assert!(mix_extended(&p, &q, MixSpec { k: 1, big_k: 2 }).is_err());
    }

    #[test]
    fn teaser_range_maps_to_separators() {
        let r = LayerRegistry::reference();
        let s = r.parse_selection("(16,'down',1)-(16,'up',0)").unwrap();
        let m = MixSpec::from_subset(&s, &r).unwrap();
        assert_eq!((m.k, m.big_k), (5, 8));
        assert_eq!(m.subset(&r), s);
    }
}
