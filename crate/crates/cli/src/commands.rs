//! Subcommand flags, resolved parameters and their runners.

use clap::Args;
use serde::{Deserialize, Serialize};

use pplus_core::analysis::{
    attention_ratio, evaluate_concept, subset_sweep, RatioOptions, SpanReduce, SweepPrompt, ToyEmbedder, ATTRIBUTES,
};
use pplus_core::conditioning::{mix_extended, wordlists, ExtendedPrompt, MixSpec, PLACEHOLDER};
use pplus_core::density::{density_report, median, Bandwidth, Combine, DensityModel};
use pplus_core::diffusion::{checkpoint, ddim_sample, image_io, pretrain, denoising_loss, NoiseSchedule, PretrainConfig, SamplerConfig, ToyModel, UNetConfig};
use pplus_core::conditioning::Vocabulary;
use pplus_core::inversion::{concept_from_str, concept_to_string, invert, InitStrategy, InversionConfig, InvertedConcept, Mode};
use pplus_core::synthcorpus::scene::{colors, shapes, textures};
use pplus_core::synthcorpus::{corpus_items, make_concept, render_at, render_examples, write_manifest, CorpusConfig};
use pplus_core::tensor::Tensor;

use crate::run::{require_file, CliResult, Failure, Run};

fn load_model(path: &str) -> CliResult<ToyModel> {
    Ok(checkpoint::load(&require_file(path)?)?)
}

fn load_concept(path: &str) -> CliResult<InvertedConcept> {
    let p = require_file(path)?;
    Ok(concept_from_str(&std::fs::read_to_string(p)?)?)
}

fn need(v: &Option<String>, what: &str) -> CliResult<String> {
    v.clone().ok_or_else(|| Failure::Config(format!("--{what} is required")))
}

fn f(v: f64) -> String {
    v.to_string()
}

// ---------------------------------------------------------------- corpus

#[derive(Args, Serialize, Debug, Default)]
pub struct CorpusFlags {
    /// Number of images.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    /// Image side in pixels (16 or 32).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Minimum occurrences of each allowed (shape, color) pair.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_per_pair: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub images: usize,
    pub size: usize,
    pub min_per_pair: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            images: 2000,
            size: 16,
            min_per_pair: 20,
        }
    }
}

pub fn corpus(run: &Run, p: &CorpusParams) -> CliResult<()> {
    let cfg = CorpusConfig {
        images: p.images,
        min_per_pair: p.min_per_pair,
        seed: run.seed,
        ..CorpusConfig::default()
    };
    let items = corpus_items(&cfg)?;
    let mut files = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let name = format!("images/{i:05}.png");
        run.write_png(&name, &render_at(&it.spec, p.size)?)?;
        files.push(name);
    }
    let mut buf = Vec::new();
    write_manifest(&items, &files, &mut buf)?;
    run.write("manifest.csv", &buf)?;
    let held: Vec<Vec<String>> = cfg.held_out.iter().map(|(s, c)| vec![s.clone(), c.clone()]).collect();
    run.write_csv("held_out.csv", &["shape", "color"], &held)?;
    log::info!("wrote {} images", items.len());
    Ok(())
}

// ---------------------------------------------------------------- pretrain

#[derive(Args, Serialize, Debug, Default)]
pub struct PretrainFlags {
    /// U-net preset: micro-5 or reference-16.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_dropout: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainParams {
    pub preset: String,
    pub images: usize,
    pub held_out_images: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub caption_dropout: f64,
}

impl Default for PretrainParams {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainParams {
            preset: "micro-5".into(),
            images: 2000,
            held_out_images: 64,
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            caption_dropout: d.caption_dropout,
        }
    }
}

#[derive(Serialize)]
struct PretrainSummary {
    held_out_initial: f64,
    held_out_final: f64,
    ratio: f64,
    parameters: usize,
    checksum: String,
}

pub fn pretrain_cmd(run: &Run, p: &PretrainParams) -> CliResult<()> {
    let config = UNetConfig::preset(&p.preset)?;
    let size = config.image_size;
    let mut model = ToyModel::new(config, Vocabulary::toy(), NoiseSchedule::default(), run.seed)?;
    let items = corpus_items(&CorpusConfig {
        images: p.images,
        seed: run.seed,
        ..CorpusConfig::default()
    })?;
    let data = render_examples(&items, size)?;
    if p.held_out_images >= data.len() {
        return Err(Failure::Config("held_out_images must be smaller than the corpus".into()));
    }
    let (train, held) = data.split_at(data.len() - p.held_out_images);
    let l0 = denoising_loss(&model, held, 4, run.seed ^ 0x4e1d)?;
    let cfg = PretrainConfig {
        steps: p.steps,
        batch: p.batch,
        lr: p.lr,
        seed: run.seed,
        caption_dropout: p.caption_dropout,
    };
    let losses = pretrain(&mut model, train, &cfg, |s, l| {
        if s % 100 == 0 {
            log::info!("step {s} loss {l:.5}");
        }
    })?;
    let l1 = denoising_loss(&model, held, 4, run.seed ^ 0x4e1d)?;
    run.write("model.ckpt", &checkpoint::to_bytes(&model)?)?;
    let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), f(*l)]).collect();
    run.write_csv("loss.csv", &["step", "loss"], &rows)?;
    run.write_json(
        "pretrain.json",
        &PretrainSummary {
            held_out_initial: l0,
            held_out_final: l1,
            ratio: l1 / l0,
            parameters: model.params().element_count(),
            checksum: format!("{:016x}", model.params().checksum()),
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------- invert

#[derive(Args, Serialize, Debug, Default)]
pub struct InvertFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// ti or xti.
    #[arg(long, value_parser = ["ti", "xti"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// One training image and learning rate 0.001.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_image: Option<bool>,
    /// Density regularization weight (0.002 when the concept is meant for mixing).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Synthetic concept: shape, color and texture names.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
    /// Number of concept images (1 to 6).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_seed: Option<u64>,
    /// PNG files to invert instead of a synthetic concept.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
    /// coarse-word, mean-of-table or zeros.
    #[arg(long, value_parser = ["coarse-word", "mean-of-table", "zeros"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    /// Descriptor word for coarse-word initialization (defaults to the shape).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_word: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct InvertParams {
    pub checkpoint: Option<String>,
    pub mode: String,
    pub single_image: bool,
    pub reg_lambda: f64,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: usize,
    pub shape: String,
    pub color: String,
    pub texture: String,
    pub count: Option<usize>,
    pub concept_seed: u64,
    pub images: Vec<String>,
    pub init: String,
    pub init_word: Option<String>,
}

impl Default for InvertParams {
    fn default() -> Self {
        InvertParams {
            checkpoint: None,
            mode: "xti".into(),
            single_image: false,
            reg_lambda: 0.0,
            steps: None,
            lr: None,
            batch: 8,
            shape: "diamond".into(),
            color: "orange".into(),
            texture: "solid".into(),
            count: None,
            concept_seed: 100,
            images: Vec::new(),
            init: "coarse-word".into(),
            init_word: None,
        }
    }
}

fn parse_mode(s: &str) -> CliResult<Mode> {
    match s {
        "ti" => Ok(Mode::Ti),
        "xti" => Ok(Mode::Xti),
        _ => Err(Failure::Config(format!("mode must be ti or xti, got {s:?}"))),
    }
}

/// Concept images named by the params: PNG files or a synthetic render.
pub fn concept_images(p: &InvertParams, size: usize) -> CliResult<Vec<Tensor>> {
    if !p.images.is_empty() {
        return p
            .images
            .iter()
            .map(|f| Ok(image_io::load_png(&require_file(f)?)?))
            .collect();
    }
    let count = p.count.unwrap_or(if p.single_image { 1 } else { 5 });
    Ok(make_concept(&p.shape, &p.color, &p.texture, count, p.concept_seed, size)?)
}

pub fn invert_cmd(run: &Run, p: &InvertParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let mode = parse_mode(&p.mode)?;
    let images = concept_images(p, model.config().image_size)?;
    let base = if p.single_image {
        InversionConfig::single_image(mode)
    } else {
        InversionConfig::new(mode)
    };
    let init = match p.init.as_str() {
        "coarse-word" => InitStrategy::CoarseWord(p.init_word.clone().unwrap_or_else(|| p.shape.clone())),
        "mean-of-table" => InitStrategy::MeanOfTable,
        "zeros" => InitStrategy::Zeros,
        other => return Err(Failure::Config(format!("unknown init strategy {other:?}"))),
    };
    let cfg = InversionConfig {
        lr: p.lr.unwrap_or(base.lr),
        steps: p.steps.unwrap_or(base.steps),
        batch: p.batch,
        reg_lambda: p.reg_lambda,
        init,
        seed: run.seed,
        ..base
    };
    let density = if cfg.reg_lambda > 0.0 {
        Some(DensityModel::fit(&model.lookup_table(), Bandwidth::Scott)?)
    } else {
        None
    };
    let before = model.params().checksum();
    let c = invert(&model, &images, &cfg, density.as_ref(), |s, l| {
        if s % 50 == 0 {
            log::info!("step {s} loss {l:.5}");
        }
    })?;
    if model.params().checksum() != before {
        return Err(Failure::Core(pplus_core::Error::InvalidArgument(
            "model parameters changed during inversion".into(),
        )));
    }
    run.write("concept.txt", concept_to_string(&c)?.as_bytes())?;
    let rows: Vec<Vec<String>> = c.losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), f(*l)]).collect();
    run.write_csv("losses.csv", &["step", "loss"], &rows)?;
    for (i, img) in images.iter().enumerate() {
        run.write_png(&format!("references/{i:02}.png"), img)?;
    }
    log::info!("{} loss {:.5} -> {:.5}", c.mode.as_str(), c.initial_loss, c.final_loss);
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Args, Serialize, Debug, Default)]
pub struct GenerateFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Plain text prompt.
    #[arg(long, conflicts_with = "concept")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Concept file from `invert`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    /// Prompt around the concept; must contain <token>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Denoising steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    /// Number of images; sample i uses seed + i.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateParams {
    pub checkpoint: Option<String>,
    pub prompt: Option<String>,
    pub concept: Option<String>,
    pub template: String,
    pub steps: usize,
    pub cfg: f64,
    pub samples: usize,
}

fn default_template() -> String {
    format!("a photo of {PLACEHOLDER}")
}

impl Default for GenerateParams {
    fn default() -> Self {
        let s = SamplerConfig::default();
        GenerateParams {
            checkpoint: None,
            prompt: None,
            concept: None,
            template: default_template(),
            steps: s.steps,
            cfg: s.guidance,
            samples: 1,
        }
    }
}

const ROUTING_HEADER: [&str; 6] = ["sample", "seed", "layer", "prompt", "source", "embedding"];

/// Samples `p` for `samples` seeds and writes images plus a routing sidecar.
fn emit_samples(
    run: &Run,
    model: &ToyModel,
    p: &ExtendedPrompt,
    routing: &[(String, String, String)],
    samples: usize,
    sampler: SamplerConfig,
) -> CliResult<()> {
    let mut rows = Vec::new();
    for i in 0..samples {
        let seed = run.seed.wrapping_add(i as u64);
        let img = ddim_sample(model, p, &SamplerConfig { seed, ..sampler })?;
        run.write_png(&format!("sample_{i:03}.png"), &img)?;
        for (layer, (prompt, source, emb)) in model.registry().to_names().into_iter().zip(routing) {
            rows.push(vec![i.to_string(), seed.to_string(), layer, prompt.clone(), source.clone(), emb.clone()]);
        }
    }
    run.write_csv("routing.csv", &ROUTING_HEADER, &rows)?;
    Ok(())
}

fn concept_routing(c: &InvertedConcept, text: &str, source: &str, file: &str) -> Vec<(String, String, String)> {
    (0..c.registry.len())
        .map(|i| {
            let idx = if c.embeddings.len() == 1 { 0 } else { i };
            (text.to_string(), source.to_string(), format!("{file}#{idx}"))
        })
        .collect()
}

pub fn generate_cmd(run: &Run, p: &GenerateParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let sampler = SamplerConfig {
        steps: p.steps,
        guidance: p.cfg,
        seed: run.seed,
    };
    let (prompt, routing) = match (&p.prompt, &p.concept) {
        (Some(text), None) => {
            let pr = model.plain_prompt(text)?;
            (pr, vec![(text.clone(), "prompt".into(), String::new()); model.registry().len()])
        }
        (None, Some(file)) => {
            let c = load_concept(file)?;
            let pr = c.prompt(&model, &p.template)?;
            let r = concept_routing(&c, &p.template, "concept", file);
            (pr, r)
        }
        _ => return Err(Failure::Config("exactly one of --prompt and --concept is required".into())),
    };
    emit_samples(run, &model, &prompt, &routing, p.samples, sampler)
}

// ---------------------------------------------------------------- mix

#[derive(Args, Serialize, Debug, Default)]
pub struct MixFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Concept whose embeddings go to the selected layers.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_concept: Option<String>,
    /// Concept used on every other layer.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_concept: Option<String>,
    /// Lower separator: layers k+1..=K (1-based) take the shape concept.
    #[arg(long = "k")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Upper separator.
    #[arg(long = "K")]
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub big_k: Option<usize>,
    /// Layer selection instead of separators, e.g. "(16,'down',1)-(16,'up',0)".
    #[arg(long, conflicts_with_all = ["k", "big_k"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct MixParams {
    pub checkpoint: Option<String>,
    pub shape_concept: Option<String>,
    pub style_concept: Option<String>,
    pub k: Option<usize>,
    #[serde(rename = "K")]
    pub big_k: Option<usize>,
    pub range: Option<String>,
    pub template: String,
    pub steps: usize,
    pub cfg: f64,
    pub samples: usize,
}

impl Default for MixParams {
    fn default() -> Self {
        let g = GenerateParams::default();
        MixParams {
            checkpoint: None,
            shape_concept: None,
            style_concept: None,
            k: None,
            big_k: None,
            range: None,
            template: g.template,
            steps: g.steps,
            cfg: g.cfg,
            samples: g.samples,
        }
    }
}

pub fn mix_cmd(run: &Run, p: &MixParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let (shape_file, style_file) = (need(&p.shape_concept, "shape-concept")?, need(&p.style_concept, "style-concept")?);
    let shape = load_concept(&shape_file)?;
    let style = load_concept(&style_file)?;
    let q = shape.prompt(&model, &p.template)?;
    let base = style.prompt(&model, &p.template)?;
    let reg = model.registry();
    let subset = match (&p.range, p.k, p.big_k) {
        (Some(r), None, None) => reg.parse_selection(r)?,
        (None, Some(k), Some(big_k)) => MixSpec::new(k, big_k, reg.len())?.subset(reg),
        _ => return Err(Failure::Config("give either --range or both --k and --K".into())),
    };
    let mixed = match (p.k, p.big_k) {
        (Some(k), Some(big_k)) => mix_extended(&base, &q, MixSpec { k, big_k })?,
        _ => base.mix_subset(&q, &subset)?,
    };
    let shape_r = concept_routing(&shape, &p.template, "shape", &shape_file);
    let style_r = concept_routing(&style, &p.template, "style", &style_file);
    let routing: Vec<_> = reg
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| if subset.contains(l) { shape_r[i].clone() } else { style_r[i].clone() })
        .collect();
    log::info!("shape concept on {} layer(s): {}", subset.len(), reg.describe(&subset));
    let sampler = SamplerConfig {
        steps: p.steps,
        guidance: p.cfg,
        seed: run.seed,
    };
    emit_samples(run, &model, &mixed, &routing, p.samples, sampler)
}

// ---------------------------------------------------------------- attn-ratio

#[derive(Args, Serialize, Debug, Default)]
pub struct AttnRatioFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Word source: toy (corpus colors and shapes) or lists (shipped word lists).
    #[arg(long, value_parser = ["toy", "lists"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub words: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    /// Seeds per prompt.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    /// Keep BOS/EOS attention in the normalization.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_special: Option<bool>,
    /// Reduction over multi-token spans: mean or sum.
    #[arg(long, value_parser = ["mean", "sum"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct AttnRatioParams {
    pub checkpoint: Option<String>,
    pub words: String,
    pub pairs: usize,
    pub seeds: usize,
    pub steps: usize,
    pub cfg: f64,
    pub include_special: bool,
    pub span: String,
}

impl Default for AttnRatioParams {
    fn default() -> Self {
        AttnRatioParams {
            checkpoint: None,
            words: "toy".into(),
            pairs: 8,
            seeds: 2,
            steps: SamplerConfig::default().steps,
            cfg: SamplerConfig::default().guidance,
            include_special: false,
            span: "mean".into(),
        }
    }
}

/// `(appearance, object)` pairs walking both word lists in parallel.
pub fn ratio_pairs(words: &str, n: usize) -> CliResult<Vec<(String, String)>> {
    let (app, obj) = match words {
        "toy" => (colors(), shapes()),
        "lists" => (wordlists::attention_appearances(), wordlists::attention_objects()),
        other => return Err(Failure::Config(format!("unknown word source {other:?}"))),
    };
    Ok((0..n).map(|i| (app[i % app.len()].to_string(), obj[i % obj.len()].to_string())).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

pub fn attn_ratio_cmd(run: &Run, p: &AttnRatioParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let span = match p.span.as_str() {
        "mean" => SpanReduce::Mean,
        "sum" => SpanReduce::Sum,
        other => return Err(Failure::Config(format!("span must be mean or sum, got {other:?}"))),
    };
    let opts = RatioOptions {
        include_special: p.include_special,
        span,
    };
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| run.seed.wrapping_add(i)).collect();
    let sampler = SamplerConfig {
        steps: p.steps,
        guidance: p.cfg,
        seed: run.seed,
    };
    let r = attention_ratio(&model, &ratio_pairs(&p.words, p.pairs)?, &seeds, &sampler, opts)?;
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|l| {
            vec![
                l.layer.clone(),
                l.coarse.to_string(),
                f(l.object_mass),
                f(l.appearance_mass),
                opt(l.ratio),
                l.records.to_string(),
            ]
        })
        .collect();
    run.write_csv(
        "ratios.csv",
        &["layer", "coarse", "object_mass", "appearance_mass", "ratio", "records"],
        &rows,
    )?;
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "coarse_mean": r.coarse_mean,
            "fine_mean": r.fine_mean,
            "coarse_gt_fine": r.coarse_exceeds_fine(),
            "prompts_used": r.prompts_used,
            "prompts_skipped": r.prompts_skipped,
        }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- subset-sweep

#[derive(Args, Serialize, Debug, Default)]
pub struct SweepFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Number of prompt pairs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub checkpoint: Option<String>,
    pub pairs: usize,
    pub seeds: usize,
    pub steps: usize,
    pub cfg: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            checkpoint: None,
            pairs: 2,
            seeds: 2,
            steps: SamplerConfig::default().steps,
            cfg: SamplerConfig::default().guidance,
        }
    }
}

/// Pairs of "color object, style" prompts differing in every attribute.
pub fn sweep_pairs(n: usize) -> Vec<(SweepPrompt, SweepPrompt)> {
    let (c, s, t) = (colors(), shapes(), textures());
    (0..n)
        .map(|i| {
            (
                SweepPrompt::new(c[(2 * i) % c.len()], s[i % s.len()], t[i % t.len()]),
                SweepPrompt::new(c[(2 * i + 1) % c.len()], s[(i + 2) % s.len()], t[(i + 1) % t.len()]),
            )
        })
        .collect()
}

pub fn sweep_cmd(run: &Run, p: &SweepParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| run.seed.wrapping_add(i)).collect();
    let sampler = SamplerConfig {
        steps: p.steps,
        guidance: p.cfg,
        seed: run.seed,
    };
    let pairs = sweep_pairs(p.pairs);
    let (rep, images) = subset_sweep(&model, &pairs, &seeds, &sampler, &ToyEmbedder::default())?;
    let mut rows = Vec::new();
    for r in &rep.rows {
        for (a, name) in ATTRIBUTES.iter().enumerate() {
            rows.push(match r.attributes {
                Some(s) => vec![
                    r.subset.to_string(),
                    r.layers.clone(),
                    name.to_string(),
                    f(s[a].to_first),
                    f(s[a].to_second),
                    s[a].favors_second().to_string(),
                ],
                None => vec![r.subset.to_string(), r.layers.clone(), name.to_string(), "".into(), "".into(), "missing".into()],
            });
        }
    }
    run.write_csv(
        "sweep.csv",
        &["subset", "layers", "attribute", "sim_first", "sim_second", "favors_second"],
        &rows,
    )?;
    let mut routing = Vec::new();
    for (si, imgs) in images.iter().enumerate() {
        for (k, img) in imgs.iter().enumerate() {
            let name = format!("images/subset{si}_{k:02}.png");
            run.write_png(&name, img)?;
            let (a, b) = &pairs[k / seeds.len()];
            routing.push(vec![name, rep.rows[si].layers.clone(), a.text(), b.text(), seeds[k % seeds.len()].to_string()]);
        }
    }
    run.write_csv("routing.csv", &["image", "second_prompt_layers", "first_prompt", "second_prompt", "seed"], &routing)?;
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "object_crossover": rep.crossover(0),
            "color_crossover": rep.crossover(1),
            "style_crossover": rep.crossover(2),
            "object_before_color": rep.object_before_color(),
        }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- density

#[derive(Args, Serialize, Debug, Default)]
pub struct DensityFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Concept files to place against the natural tokens.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub concepts: Vec<String>,
    /// Fixed bandwidth instead of Scott's rule.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// sum (per-dimension log densities), mean, or joint (isotropic KDE).
    #[arg(long, value_parser = ["sum", "mean", "joint"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combine: Option<String>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct DensityParams {
    pub checkpoint: Option<String>,
    pub concepts: Vec<String>,
    pub bandwidth: Option<f64>,
    pub combine: String,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            checkpoint: None,
            concepts: Vec::new(),
            bandwidth: None,
            combine: "sum".into(),
        }
    }
}

pub fn density_cmd(run: &Run, p: &DensityParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    if p.concepts.is_empty() {
        return Err(Failure::Config("--concepts needs at least one concept file".into()));
    }
    let bw = p.bandwidth.map_or(Bandwidth::Scott, Bandwidth::Fixed);
    let combine = match p.combine.as_str() {
        "sum" => Combine::Sum,
        "mean" => Combine::Mean,
        "joint" => Combine::JointIsotropic,
        other => return Err(Failure::Config(format!("unknown combine mode {other:?}"))),
    };
    let dm = DensityModel::fit(&model.lookup_table(), bw)?.with_combine(combine);
    let placeholder = model.vocab().id(PLACEHOLDER).expect("placeholder token");
    let mut inputs = Vec::new();
    for file in &p.concepts {
        inputs.extend(load_concept(file)?.density_inputs(placeholder));
    }
    let rows = density_report(&dm, &inputs)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.token_id.to_string(), r.group.clone(), r.layer.clone(), f(r.log_density), f(r.percentile)]
        })
        .collect();
    run.write_csv("density.csv", &["token_id", "group", "layer", "log_density", "percentile"], &csv_rows)?;
    let med = |g: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.group == g).map(|r| r.log_density).collect();
        (!v.is_empty()).then(|| median(&v))
    };
    let (ti, xti) = (med("TI"), med("XTI"));
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "median_natural": med("natural"),
            "median_ti": ti,
            "median_xti": xti,
            "xti_ge_ti": ti.zip(xti).map(|(t, x)| x >= t),
        }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Serialize, Debug, Default)]
pub struct EvalFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
    /// Text standing in for the placeholder when scoring prompts
    /// (defaults to "color shape").
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<String>,
    /// Reference images; defaults to re-rendering the synthetic concept.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concept_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub checkpoint: Option<String>,
    pub concept: Option<String>,
    pub descriptor: Option<String>,
    pub references: Vec<String>,
    pub shape: String,
    pub color: String,
    pub texture: String,
    pub count: usize,
    pub concept_seed: u64,
    pub seeds: usize,
    pub steps: usize,
    pub cfg: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        let i = InvertParams::default();
        EvalParams {
            checkpoint: None,
            concept: None,
            descriptor: None,
            references: Vec::new(),
            shape: i.shape,
            color: i.color,
            texture: i.texture,
            count: 5,
            concept_seed: i.concept_seed,
            seeds: 4,
            steps: SamplerConfig::default().steps,
            cfg: SamplerConfig::default().guidance,
        }
    }
}

pub fn eval_cmd(run: &Run, p: &EvalParams) -> CliResult<()> {
    let model = load_model(&need(&p.checkpoint, "checkpoint")?)?;
    let concept = load_concept(&need(&p.concept, "concept")?)?;
    let refs = concept_images(
        &InvertParams {
            shape: p.shape.clone(),
            color: p.color.clone(),
            texture: p.texture.clone(),
            count: Some(p.count),
            concept_seed: p.concept_seed,
            images: p.references.clone(),
            ..InvertParams::default()
        },
        model.config().image_size,
    )?;
    let descriptor = p.descriptor.clone().unwrap_or_else(|| format!("{} {}", p.color, p.shape));
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| run.seed.wrapping_add(i)).collect();
    let sampler = SamplerConfig {
        steps: p.steps,
        guidance: p.cfg,
        seed: run.seed,
    };
    let e = evaluate_concept(&model, &concept, &descriptor, &refs, &seeds, &sampler, &ToyEmbedder::default())?;
    let rows: Vec<Vec<String>> = e.prompts.iter().map(|s| vec![s.prompt.clone(), f(s.text_similarity)]).collect();
    run.write_csv("eval.csv", &["prompt", "text_similarity"], &rows)?;
    run.write_json(
        "summary.json",
        &serde_json::json!({
            "mode": concept.mode.as_str(),
            "text_similarity_mean": e.text_mean,
            "subject_similarity": e.subject_similarity,
            "prompts": e.prompts.len(),
        }),
    )?;
    Ok(())
}
