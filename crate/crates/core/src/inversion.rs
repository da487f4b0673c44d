//! Textual inversion of one embedding (TI) or one embedding per
//! cross-attention layer (XTI) against a frozen model.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{wordlists, ExtendedPrompt, LayerRegistry, LayerSpec, Override, PromptTemplate};
use crate::density::DensityModel;
use crate::diffusion::sample::gaussian;
use crate::diffusion::ToyModel;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::par;
use crate::tensor::{finite_diff_check_with, GradCheck, Graph, NodeId, Stencil, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ti,
    Xti,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ti => "TI",
            Mode::Xti => "XTI",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Copy the lookup row of a descriptor word into every slot.
    CoarseWord(String),
    /// Column means of the natural rows.
    MeanOfTable,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub mode: Mode,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Weight of the `-sum_i log p(e_i)` term; zero disables it.
    pub reg_lambda: f64,
    pub templates: Vec<String>,
    pub init: InitStrategy,
    pub seed: u64,
    /// Size of the fixed draw set behind [`InvertedConcept::final_loss`].
    pub probe_draws: usize,
    pub probe_seed: u64,
}

impl InversionConfig {
    pub fn new(mode: Mode) -> Self {
        InversionConfig {
            mode,
            lr: 0.005,
            steps: match mode {
                Mode::Ti => 5000,
                Mode::Xti => 500,
            },
            batch: 8,
            reg_lambda: 0.0,
            templates: wordlists::training_templates().iter().map(|s| s.to_string()).collect(),
            init: InitStrategy::CoarseWord("square".into()),
            seed: 0,
            probe_draws: 32,
            probe_seed: 0x5eed,
        }
    }

    /// Single-image regime: learning rate 0.001.
    pub fn single_image(mode: Mode) -> Self {
        InversionConfig {
            lr: 0.001,
            ..Self::new(mode)
        }
    }

    /// Regularized variant intended for style mixing.
    pub fn for_mixing(mode: Mode) -> Self {
        InversionConfig {
            reg_lambda: 0.002,
            ..Self::new(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || self.probe_draws == 0 || !(self.reg_lambda >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate, batch and probe draws must be positive and lambda non-negative".into(),
            ));
        }
        if self.templates.is_empty() {
            return Err(Error::InvalidArgument("at least one training template is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertedConcept {
    pub mode: Mode,
    /// One vector for TI, one per registry layer for XTI.
    pub embeddings: Vec<Vec<f64>>,
    pub registry: Vec<String>,
    pub config: InversionConfig,
    /// Reconstruction loss on the fixed probe draws after training.
    pub final_loss: f64,
    /// Reconstruction loss on the same probe draws before training.
    pub initial_loss: f64,
    /// Mean batch objective per step.
    pub losses: Vec<f64>,
}

impl InvertedConcept {
    /// Per-layer embeddings; TI repeats its single vector.
    pub fn per_layer(&self) -> Vec<Vec<f64>> {
        match self.mode {
            Mode::Ti => vec![self.embeddings[0].clone(); self.registry.len()],
            Mode::Xti => self.embeddings.clone(),
        }
    }

    /// Rows for [`density_report`](crate::density::density_report): one per
    /// stored embedding, labelled with the mode and, for XTI, the layer.
    pub fn density_inputs(&self, token_id: usize) -> Vec<(usize, String, String, Vec<f64>)> {
        self.embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let layer = match self.mode {
                    Mode::Ti => String::new(),
                    Mode::Xti => self.registry[i].clone(),
                };
                (token_id, self.mode.as_str().to_string(), layer, e.clone())
            })
            .collect()
    }

    /// `text` (containing the placeholder) with this concept at every layer.
    pub fn prompt(&self, model: &ToyModel, text: &str) -> Result<ExtendedPrompt> {
        if model.registry().to_names() != self.registry {
            return Err(Error::RegistryMismatch(
                "concept was inverted against a different layer registry".into(),
            ));
        }
        let t = model.tokenize(text)?;
        concept_prompt(model.registry(), &t, &self.per_layer())
    }
}

/// Extended prompt with `per_layer[i]` substituted at layer i.
pub fn concept_prompt(reg: &LayerRegistry, t: &PromptTemplate, per_layer: &[Vec<f64>]) -> Result<ExtendedPrompt> {
    let specs = per_layer
        .iter()
        .map(|e| LayerSpec::new(t.clone(), Some(Override::Value(Tensor::vector(e.clone())))))
        .collect::<Result<Vec<_>>>()?;
    ExtendedPrompt::new(reg.clone(), specs)
}

/// Initial embeddings for `mode`.
pub fn embed_init(model: &ToyModel, strategy: &InitStrategy, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let d = model.embedding_dim();
    let v = match strategy {
        InitStrategy::Zeros => vec![0.0; d],
        InitStrategy::CoarseWord(w) => model.word_row(w)?,
        InitStrategy::MeanOfTable => {
            let table = model.lookup_table();
            let mut m = vec![0.0; d];
            for r in table.natural_rows() {
                for (a, b) in m.iter_mut().zip(r) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|a| *a /= table.natural_len() as f64);
            m
        }
    };
    let n = match mode {
        Mode::Ti => 1,
        Mode::Xti => model.registry().len(),
    };
    Ok(vec![v; n])
}

/// One sample of the reconstruction objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub image: usize,
    pub template: usize,
    pub t: usize,
    pub noise_seed: u64,
}

pub fn sample_draws(n: usize, images: usize, templates: usize, total_t: usize, rng: &mut impl Rng) -> Vec<Draw> {
    (0..n)
        .map(|_| Draw {
            image: rng.random_range(0..images),
            template: rng.random_range(0..templates),
            t: rng.random_range(1..=total_t),
            noise_seed: rng.random(),
        })
        .collect()
}

/// Builds the squared error of one draw on `g`, with `embeddings` already on
/// the graph: one node routed to every layer (TI) or one node per layer.
pub fn draw_loss_on(
    model: &ToyModel,
    g: &mut Graph,
    images: &[Tensor],
    templates: &[PromptTemplate],
    embeddings: &[NodeId],
    d: Draw,
) -> Result<NodeId> {
    let n = model.registry().len();
    if embeddings.len() != 1 && embeddings.len() != n {
        return Err(Error::RegistryMismatch(format!(
            "{} embeddings for a registry of {n} layers",
            embeddings.len()
        )));
    }
    let img = images
        .get(d.image)
        .ok_or_else(|| Error::InvalidArgument(format!("draw refers to missing image {}", d.image)))?;
    let t = templates
        .get(d.template)
        .ok_or_else(|| Error::InvalidArgument(format!("draw refers to missing template {}", d.template)))?;
    let noise = gaussian(img.shape(), &mut ChaCha8Rng::seed_from_u64(d.noise_seed));
    let xt = model.schedule().forward_noise(img, d.t, &noise)?;
    let b = model.bind(g, false)?;
    let specs = (0..n)
        .map(|i| LayerSpec::new(t.clone(), Some(Override::Node(embeddings[if embeddings.len() == 1 { 0 } else { i }]))))
        .collect::<Result<Vec<_>>>()?;
    let p = ExtendedPrompt::new(model.registry().clone(), specs)?;
    let x = g.constant(xt)?;
    let target = g.constant(noise)?;
    let out = model.predict_on(g, &b, x, d.t, &p)?;
    g.mse(out.eps, target)
}

/// Squared error of one draw and, when `with_grads`, the gradient for each
/// embedding. With one embedding (TI) the same leaf feeds every layer.
pub fn draw_loss(
    model: &ToyModel,
    images: &[Tensor],
    templates: &[PromptTemplate],
    embeddings: &[Vec<f64>],
    d: Draw,
    with_grads: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = embeddings
        .iter()
        .map(|e| g.leaf(Tensor::vector(e.clone()), with_grads))
        .collect::<Result<_>>()?;
    let loss = draw_loss_on(model, &mut g, images, templates, &leaves, d)?;
    let value = g.value(loss).item();
    if !with_grads {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    let gs = leaves
        .iter()
        .map(|&l| grads.get_or_zeros(l, g.shape(l)).into_data())
        .collect();
    Ok((value, gs))
}

/// Finite-difference check of the gradient for each embedding of one draw.
pub fn embedding_gradient_check(
    model: &ToyModel,
    images: &[Tensor],
    templates: &[PromptTemplate],
    embeddings: &[Vec<f64>],
    d: Draw,
    eps: f64,
    stencil: Stencil,
) -> Result<Vec<GradCheck>> {
    (0..embeddings.len())
        .map(|i| {
            finite_diff_check_with(
                |g, x| {
                    let mut ids = Vec::with_capacity(embeddings.len());
                    for (j, e) in embeddings.iter().enumerate() {
                        ids.push(if j == i { x } else { g.constant(Tensor::vector(e.clone()))? });
                    }
                    draw_loss_on(model, g, images, templates, &ids, d)
                },
                &Tensor::vector(embeddings[i].clone()),
                eps,
                stencil,
            )
        })
        .collect()
}

/// Mean objective over `draws` and its gradient for each embedding.
pub fn loss_xti(
    model: &ToyModel,
    images: &[Tensor],
    templates: &[PromptTemplate],
    embeddings: &[Vec<f64>],
    draws: &[Draw],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let parts = par::try_map(draws.len(), |i| draw_loss(model, images, templates, embeddings, draws[i], true))?;
    let inv = 1.0 / draws.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; model.embedding_dim()]; embeddings.len()];
    for (l, gs) in parts {
        loss += l;
        for (acc, g) in grad.iter_mut().zip(gs) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    grad.iter_mut().flatten().for_each(|v| *v *= inv);
    Ok((loss * inv, grad))
}

/// Mean loss over `draws` without gradients.
pub fn eval_loss(
    model: &ToyModel,
    images: &[Tensor],
    templates: &[PromptTemplate],
    embeddings: &[Vec<f64>],
    draws: &[Draw],
) -> Result<f64> {
    let parts = par::try_map(draws.len(), |i| draw_loss(model, images, templates, embeddings, draws[i], false))?;
    Ok(parts.iter().map(|(l, _)| l).sum::<f64>() / draws.len() as f64)
}

/// Adds `-lambda * sum_i log p(e_i)` to `loss` and its gradient to `grad`.
pub fn add_density_term(
    density: &DensityModel,
    lambda: f64,
    embeddings: &[Vec<f64>],
    loss: &mut f64,
    grad: &mut [Vec<f64>],
) -> Result<()> {
    for (e, g) in embeddings.iter().zip(grad.iter_mut()) {
        let (lp, dlp) = density.log_density_grad(e)?;
        *loss -= lambda * lp;
        for (a, b) in g.iter_mut().zip(dlp) {
            *a -= lambda * b;
        }
    }
    Ok(())
}

/// Optimizes the concept embeddings; model parameters are never written.
pub fn invert(
    model: &ToyModel,
    images: &[Tensor],
    cfg: &InversionConfig,
    density: Option<&DensityModel>,
    mut progress: impl FnMut(usize, f64),
) -> Result<InvertedConcept> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("concept dataset is empty".into()));
    }
    let shape = model.image_shape();
    if images.iter().any(|i| i.shape() != shape) {
        return Err(Error::InvalidArgument(format!("concept images must have shape {shape:?}")));
    }
    if cfg.reg_lambda > 0.0 && density.is_none() {
        return Err(Error::InvalidArgument("a density model is required when lambda > 0".into()));
    }
    let templates = cfg
        .templates
        .iter()
        .map(|t| {
            let t = model.tokenize(t)?;
            if t.has_placeholder() {
                Ok(t)
            } else {
                Err(Error::InvalidArgument("training templates need a placeholder".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total_t = model.schedule().steps;
    let probe = sample_draws(
        cfg.probe_draws,
        images.len(),
        templates.len(),
        total_t,
        &mut ChaCha8Rng::seed_from_u64(cfg.probe_seed),
    );
    let mut emb = embed_init(model, &cfg.init, cfg.mode)?;
    let initial_loss = eval_loss(model, images, &templates, &emb, &probe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let draws = sample_draws(cfg.batch, images.len(), templates.len(), total_t, &mut rng);
        let (mut loss, mut grad) = loss_xti(model, images, &templates, &emb, &draws)?;
        if let (Some(dm), true) = (density, cfg.reg_lambda > 0.0) {
            add_density_term(dm, cfg.reg_lambda, &emb, &mut loss, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::DivergedAt { step });
        }
        let mut params: Vec<Tensor> = emb.iter().map(|e| Tensor::vector(e.clone())).collect();
        let grads: Vec<Tensor> = grad.into_iter().map(Tensor::vector).collect();
        adam.step(&mut params, &grads)?;
        emb = params.into_iter().map(Tensor::into_data).collect();
        losses.push(loss);
        progress(step, loss);
    }
    let final_loss = eval_loss(model, images, &templates, &emb, &probe)?;
    Ok(InvertedConcept {
        mode: cfg.mode,
        embeddings: emb,
        registry: model.registry().to_names(),
        config: cfg.clone(),
        final_loss,
        initial_loss,
        losses,
    })
}

/// Text file: `key: value` header lines, a blank line, then one base64 line
/// of little-endian f64 values per embedding. The loss trajectory is not kept.
pub fn concept_to_string(c: &InvertedConcept) -> Result<String> {
    let dim = c.embeddings.first().map_or(0, Vec::len);
    let mut s = String::from("pplus-concept 1\n");
    s += &format!("mode: {}\n", c.mode.as_str());
    s += &format!("dim: {dim}\n");
    s += &format!("count: {}\n", c.embeddings.len());
    s += &format!("final_loss: {:e}\n", c.final_loss);
    s += &format!("initial_loss: {:e}\n", c.initial_loss);
    s += &format!("registry: {}\n", serde_json::to_string(&c.registry)?);
    s += &format!("config: {}\n", serde_json::to_string(&c.config)?);
    s += "\n";
    for e in &c.embeddings {
        let bytes: Vec<u8> = e.iter().flat_map(|v| v.to_le_bytes()).collect();
        s += &B64.encode(bytes);
        s += "\n";
    }
    Ok(s)
}

pub fn concept_from_str(s: &str) -> Result<InvertedConcept> {
    let bad = |m: &str| Error::Format(format!("concept file: {m}"));
    let (head, body) = s.split_once("\n\n").ok_or_else(|| bad("missing blank line after header"))?;
    let mut lines = head.lines();
    if lines.next() != Some("pplus-concept 1") {
        return Err(bad("unknown format line"));
    }
    let mut kv = std::collections::BTreeMap::new();
    for l in lines {
        let (k, v) = l.split_once(": ").ok_or_else(|| bad("malformed header line"))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
    let mode = match get("mode")? {
        "TI" => Mode::Ti,
        "XTI" => Mode::Xti,
        _ => return Err(bad("mode must be TI or XTI")),
    };
    let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(k));
    let dim: usize = get("dim")?.parse().map_err(|_| bad("dim"))?;
    let count: usize = get("count")?.parse().map_err(|_| bad("count"))?;
    let registry: Vec<String> = serde_json::from_str(get("registry")?)?;
    let config: InversionConfig = serde_json::from_str(get("config")?)?;
    let embeddings = body
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bytes = B64.decode(l).map_err(|e| bad(&e.to_string()))?;
            if bytes.len() != 8 * dim {
                return Err(bad("vector length does not match dim"));
            }
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite embedding value"));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = match mode {
        Mode::Ti => 1,
        Mode::Xti => registry.len(),
    };
    if embeddings.len() != count || count != expected {
        return Err(bad("embedding count does not match mode and registry"));
    }
    Ok(InvertedConcept {
        mode,
        embeddings,
        registry,
        config,
        final_loss: num("final_loss")?,
        initial_loss: num("initial_loss")?,
        losses: Vec::new(),
    })
}
