use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::UNetConfig;
use super::schedule::NoiseSchedule;
use super::unet::{LayerContext, UNet, UNetOutput};
use crate::conditioning::{
    ExtendedPrompt, LayerRegistry, LayerSpec, LookupTable, PromptTemplate, TextEncoder, TokenId, Vocabulary,
};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::tensor::{Graph, NodeId, Tensor};

/// Text encoder plus U-net sharing one parameter store.
#[derive(Clone, Debug)]
pub struct ToyModel {
    config: UNetConfig,
    vocab: Vocabulary,
    registry: LayerRegistry,
    schedule: NoiseSchedule,
    store: ParamStore,
    encoder: TextEncoder,
    unet: UNet,
}

impl ToyModel {
    /// Freshly initialized model; parameters are a pure function of `seed`.
    pub fn new(config: UNetConfig, vocab: Vocabulary, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.max_len() != config.max_len {
            return Err(Error::InvalidArgument(format!(
                "vocabulary max length {} differs from model context length {}",
                vocab.max_len(),
                config.max_len
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = TextEncoder::new(config.encoder(vocab.len()), &mut store, &mut rng);
        let unet = UNet::new(&config, &mut store, &mut rng)?;
        let registry = config.registry()?;
        debug_assert_eq!(registry.layers(), unet.attention_layers().as_slice());
        Ok(ToyModel {
            config,
            vocab,
            registry,
            schedule,
            store,
            encoder,
            unet,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn registry(&self) -> &LayerRegistry {
        &self.registry
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [3, self.config.image_size, self.config.image_size]
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.text_dim
    }

    /// The token lookup table; natural rows are the non-placeholder vocabulary.
    pub fn lookup_table(&self) -> LookupTable {
        let t = self.store.get(self.encoder.table_param()).clone();
        LookupTable::new(t, self.vocab.natural_len()).expect("table matches vocabulary")
    }

    pub fn token_row(&self, id: TokenId) -> Vec<f64> {
        let d = self.embedding_dim();
        self.store.get(self.encoder.table_param()).data()[id * d..(id + 1) * d].to_vec()
    }

    pub fn word_row(&self, word: &str) -> Result<Vec<f64>> {
        let id = self
            .vocab
            .id(word)
            .filter(|&i| !self.vocab.is_placeholder(i))
            .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
        Ok(self.token_row(id))
    }

    pub fn tokenize(&self, text: &str) -> Result<PromptTemplate> {
        self.vocab.tokenize(text)
    }

    /// An ordinary prompt lifted into the per-layer space.
    pub fn plain_prompt(&self, text: &str) -> Result<ExtendedPrompt> {
        Ok(ExtendedPrompt::broadcast(
            &self.registry,
            LayerSpec::plain(self.tokenize(text)?)?,
        ))
    }

    pub fn empty_prompt(&self) -> ExtendedPrompt {
        self.plain_prompt("").expect("empty prompt tokenizes")
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Binding> {
        self.store.bind(g, trainable)
    }

    fn check_registry(&self, p: &ExtendedPrompt) -> Result<()> {
        if p.registry() != &self.registry {
            return Err(Error::RegistryMismatch(
                "prompt was built against a different layer registry".into(),
            ));
        }
        Ok(())
    }

    /// Encodes every layer's spec; identical specs share one encoder pass.
    pub fn contexts(&self, g: &mut Graph, b: &Binding, p: &ExtendedPrompt) -> Result<Vec<LayerContext>> {
        self.check_registry(p)?;
        let nodes = self.encoder.encode_extended(g, b, p)?;
        Ok(nodes
            .into_iter()
            .zip(p.specs())
            .map(|(node, s)| LayerContext {
                node,
                mask: s.template().key_mask(),
            })
            .collect())
    }

    /// Noise prediction on an existing graph.
    pub fn predict_on(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: NodeId,
        t: usize,
        p: &ExtendedPrompt,
    ) -> Result<UNetOutput> {
        let ctx = self.contexts(g, b, p)?;
        self.unet.forward(g, b, x, t, self.schedule.alpha_bar(t), &ctx)
    }

    pub fn predict_noise(&self, x: &Tensor, t: usize, p: &ExtendedPrompt) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xn = g.constant(x.clone())?;
        let out = self.predict_on(&mut g, &b, xn, t, p)?;
        Ok(g.value(out.eps).clone())
    }

    /// Ordinary conditioning: the template is encoded once and the same
    /// context is fed to every cross-attention layer.
    pub fn predict_noise_single(&self, x: &Tensor, t: usize, template: &PromptTemplate) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xn = g.constant(x.clone())?;
        let node = self.encoder.encode(&mut g, &b, template, None)?;
        let ctx = vec![
            LayerContext {
                node,
                mask: template.key_mask(),
            };
            self.registry.len()
        ];
        let out = self.unet.forward(&mut g, &b, xn, t, self.schedule.alpha_bar(t), &ctx)?;
        Ok(g.value(out.eps).clone())
    }

    /// Classifier-free guidance, `(1 - w) * uncond + w * cond`, which is
    /// `uncond + w * (cond - uncond)` with exact endpoints at `w` of 0 and 1.
    pub fn cfg_predict(&self, x: &Tensor, t: usize, p: &ExtendedPrompt, w: f64) -> Result<Tensor> {
        let c = self.predict_noise(x, t, p)?;
        let u = self.predict_noise(x, t, &self.empty_prompt())?;
        Ok(guide(&u, &c, w))
    }

}

/// Combines unconditional and conditional predictions with guidance scale `w`.
pub fn guide(uncond: &Tensor, cond: &Tensor, w: f64) -> Tensor {
    let data = uncond
        .data()
        .iter()
        .zip(cond.data())
        .map(|(u, c)| (1.0 - w) * u + w * c)
        .collect();
    Tensor::new(uncond.shape().to_vec(), data).expect("same shape")
}
