//! Self-contained end-to-end checks on a freshly trained tiny model.

use clap::Args;
use serde::{Deserialize, Serialize};

use pplus_core::analysis::{
    ratio_table, subject_similarity, AttentionRecord, Embedder, RatioOptions, TokenRole, ToyEmbedder,
};
use pplus_core::conditioning::{mix_extended, LayerId, LayerRegistry, LayerSubset, MixSpec, Vocabulary};
use pplus_core::density::{Bandwidth, DensityModel};
use pplus_core::diffusion::{
    checkpoint, ddim_sample, ddim_sample_single, pretrain, NoiseSchedule, PretrainConfig, SamplerConfig, ToyModel,
    UNetConfig,
};
use pplus_core::inversion::{
    concept_from_str, concept_to_string, draw_loss, embed_init, embedding_gradient_check, invert, Draw,
    InitStrategy, InversionConfig, Mode,
};
use pplus_core::synthcorpus::{
    attribute_oracle, corpus_items, make_concept, render_at, render_examples, CorpusConfig, SceneSpec,
};
use pplus_core::tensor::{opsuite, Stencil, Tensor};

use crate::run::{CliResult, Failure, Run};

#[derive(Args, Serialize, Debug, Default)]
pub struct SelftestFlags {
    /// Pretraining steps for the throwaway model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    /// Sampler steps used by the sampling checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invert_steps: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestParams {
    pub pretrain_steps: usize,
    pub images: usize,
    pub sample_steps: usize,
    pub invert_steps: usize,
}

impl Default for SelftestParams {
    fn default() -> Self {
        SelftestParams {
            pretrain_steps: 200,
            images: 400,
            sample_steps: 10,
            invert_steps: 20,
        }
    }
}

#[derive(Serialize)]
struct Check {
    check: String,
    passed: bool,
    value: f64,
    threshold: String,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn below(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value.is_finite() && value < limit, value, format!("< {limit:e}"));
    }

    fn at_most(&mut self, name: &str, value: f64, limit: f64) {
        self.push(name, value.is_finite() && value <= limit, value, format!("<= {limit:e}"));
    }

    fn truth(&mut self, name: &str, ok: bool) {
        self.push(name, ok, if ok { 1.0 } else { 0.0 }, "true".into());
    }

    fn push(&mut self, name: &str, passed: bool, value: f64, threshold: String) {
        if !passed {
            log::error!("selftest check {name} failed: {value}");
        }
        self.0.push(Check {
            check: name.into(),
            passed,
            value,
            threshold,
        });
    }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b)
}

/// Deterministic pseudo-random values in roughly [-1, 1].
fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 12.9898 + phase).sin() * 0.9).collect()
}

fn tensor_checks(c: &mut Checks) -> CliResult<()> {
    let suite = opsuite::op_gradient_suite(11)?;
    let worst = suite.iter().map(|o| o.max_rel_error).fold(0.0, f64::max);
    let worst_norm = suite.iter().map(|o| o.norm_rel_error).fold(0.0, f64::max);
    c.below("op_gradients_max_rel", worst, 1e-6);
    c.below("op_gradients_norm_rel", worst_norm, 1e-6);
    let covered: std::collections::BTreeSet<&str> = suite.iter().map(|o| o.op.as_str()).collect();
    c.truth("op_gradients_cover_suite", covered.len() == opsuite::suite_ops().len());

    let mut g = pplus_core::tensor::Graph::new();
    let a = g.constant(Tensor::new([2, 3], wave(6, 0.1))?)?;
    let eye = g.constant(Tensor::eye(3))?;
    let ai = g.matmul(a, eye)?;
    let at = g.transpose(a)?;
    let att = g.transpose(at)?;
    let ok = g.value(ai).bit_eq(g.value(a)) && g.value(att).bit_eq(g.value(a));
    c.truth("matmul_identity_and_double_transpose", ok);
    let s = g.softmax(a)?;
    let rows = g.value(s).data().chunks(3).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    c.below("softmax_rows_sum_to_one", rows, 1e-15);
    Ok(())
}

const GOLDEN_SUBSETS: [&str; 8] = [
    "Empty set",
    "Layer (8, 'down', 0) only",
    "(16, 'down', 1) - (8, 'down', 0)",
    "(16, 'down', 1) - (16, 'up', 0)",
    "(16, 'down', 0) - (16, 'up', 0)",
    "(16, 'down', 0) - (16, 'up', 1)",
    "(16, 'down', 0) - (16, 'up', 2)",
    "(64, 'down', 0) - (64, 'up', 2)",
];

fn routing_checks(c: &mut Checks) -> CliResult<()> {
    let reg = LayerRegistry::reference();
    let got: Vec<String> = reg.subset_sequence().iter().map(|s| reg.describe(s)).collect();
    c.truth("subset_sequence_goldens", got == GOLDEN_SUBSETS);
    let mut names = Vec::new();
    for (res, n) in [(64, 2), (32, 2), (16, 2)] {
        names.extend((0..n).map(|i| format!("({res}, 'down', {i})")));
    }
    names.push("(8, 'down', 0)".to_string());
    for res in [16, 32, 64] {
        names.extend((0..3).map(|i| format!("({res}, 'up', {i})")));
    }
    let round = names.iter().all(|n| n.parse::<LayerId>().map(|l| l.to_string() == *n).unwrap_or(false))
        && reg.to_names() == names;
    c.truth("layer_names_round_trip", round);
    let range = reg.parse_selection("(16,'down',1)-(16,'up',0)")?;
    c.truth("range_selects_three", range.len() == 3);
    let list = reg.parse_selection("(8,'down',0),(16,'up',0)")?;
    c.truth("list_selects_two", list.len() == 2);
    c.truth("bad_layer_rejected", reg.parse_selection("(12,'down',0)").is_err());
    Ok(())
}

/// Product of per-dimension Gaussian mixtures, summed directly.
fn brute_log_density(points: &[Vec<f64>], h: &[f64], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..x.len() {
        let s: f64 = points
            .iter()
            .map(|p| (-0.5 * ((x[k] - p[k]) / h[k]).powi(2)).exp() / (h[k] * (2.0 * std::f64::consts::PI).sqrt()))
            .sum();
        total += (s / points.len() as f64).ln();
    }
    total
}

fn density_checks(c: &mut Checks) -> CliResult<()> {
    let (n, d) = (100, 8);
    let points: Vec<Vec<f64>> = (0..n).map(|i| wave(d, i as f64 * 0.731)).collect();
    let dm = DensityModel::fit_points(points.clone(), Bandwidth::Scott)?;
    let h: Vec<f64> = (0..d)
        .map(|k| {
            let m = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let var = points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (n as f64).powf(-0.2) * var.sqrt()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for q in 0..20 {
        let x = wave(d, 100.0 + q as f64 * 1.37);
        worst = worst.max((dm.log_density(&x)? - brute_log_density(&points, &h, &x)).abs());
    }
    c.at_most("kde_matches_brute_force", worst, 1e-12);

    let shift = wave(d, 55.5);
    let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
    let dm2 = DensityModel::fit_points(moved, Bandwidth::Scott)?;
    let mut tw: f64 = 0.0;
    for q in 0..20 {
        let x = wave(d, 200.0 + q as f64);
        let y: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        tw = tw.max((dm.log_density(&x)? - dm2.log_density(&y)?).abs());
    }
    c.at_most("kde_translation_equivariant", tw, 1e-10);

    let hh = 0.3;
    let single = DensityModel::fit_points(vec![vec![0.7], vec![0.7]], Bandwidth::Fixed(hh))?;
    let want = -(hh * (2.0 * std::f64::consts::PI).sqrt()).ln();
    c.at_most("kde_single_point", (single.log_density(&[0.7])? - want).abs(), 1e-12);
    Ok(())
}

struct ConstEmbedder;

impl Embedder for ConstEmbedder {
    fn dim(&self) -> usize {
        3
    }

    fn embed_image(&self, img: &Tensor) -> pplus_core::Result<Vec<f64>> {
        let m = img.data().iter().sum::<f64>() / img.len() as f64;
        Ok(vec![1.0, m.abs(), 0.0])
    }

    fn embed_text(&self, _text: &str) -> pplus_core::Result<Vec<f64>> {
        Ok(vec![1.0, 0.0, 0.0])
    }
}

fn attention_checks(c: &mut Checks) -> CliResult<()> {
    use TokenRole::*;
    let reg = LayerRegistry::reference();
    let roles = vec![Special, Appearance, Object, Special];
    let rec = |layer: LayerId, w: [f64; 4]| {
        let rows: Vec<f64> = w.iter().chain(w.iter()).copied().collect();
        AttentionRecord::from_heads(layer, 1, &[(&rows, 2, 4)], roles.clone())
    };
    let l0 = reg.layers()[0];
    let l6 = reg.layers()[6];
    let equal = ratio_table(&reg, &[rec(l0, [0.25, 0.25, 0.25, 0.25])?], RatioOptions::default())?;
    let r0 = equal[0].ratio.unwrap_or(f64::NAN);
    c.at_most("attention_equal_mass_ratio_one", (r0 - 1.0).abs(), 1e-9);
    let two = ratio_table(
        &reg,
        &[rec(l0, [0.1, 0.3, 0.3, 0.3])?, rec(l6, [0.1, 0.2, 0.4, 0.3])?],
        RatioOptions::default(),
    )?;
    let r6 = two[6].ratio.unwrap_or(f64::NAN);
    let others = two.iter().enumerate().all(|(i, r)| i == 6 || i == 0 || r.ratio.is_none());
    c.at_most("attention_single_layer_ratio_two", (r6 - 2.0).abs(), 1e-9);
    c.truth("attention_unvisited_layers_empty", others);

    let img = render_at(&spec("square", "red", "solid", 1), 16)?;
    let other = render_at(&spec("circle", "blue", "solid", 2), 16)?;
    let same = subject_similarity(std::slice::from_ref(&img), std::slice::from_ref(&img), &ConstEmbedder)?;
    c.at_most("stub_embedder_self_similarity", (same - 1.0).abs(), 1e-12);
    let e = ToyEmbedder::default();
    let v = e.embed_image(&img)?;
    let hit = pplus_core::analysis::cosine(&v, &e.embed_text("red square")?);
    let miss = pplus_core::analysis::cosine(&v, &e.embed_text("blue circle")?);
    c.truth("toy_embedder_prefers_matching_text", hit > miss);
    let s_same = subject_similarity(std::slice::from_ref(&img), std::slice::from_ref(&img), &e)?;
    let s_other = subject_similarity(&[img], &[other], &e)?;
    c.truth("toy_embedder_prefers_same_subject", s_same > s_other);
    Ok(())
}

fn spec(shape: &str, color: &str, texture: &str, seed: u64) -> SceneSpec {
    SceneSpec {
        shape: shape.into(),
        color: color.into(),
        texture: texture.into(),
        cx: 16,
        cy: 16,
        half: 9,
        seed,
    }
}

fn oracle_checks(c: &mut Checks) -> CliResult<()> {
    let cases = [
        ("square", "red", "solid"),
        ("circle", "blue", "stripes"),
        ("triangle", "green", "checker"),
        ("diamond", "orange", "solid"),
    ];
    let mut hits = 0;
    for (i, (s, col, t)) in cases.iter().enumerate() {
        let a = attribute_oracle(&render_at(&spec(s, col, t, i as u64), 32)?);
        if (a.shape.value.as_str(), a.color.value.as_str(), a.texture.value.as_str()) == (*s, *col, *t) {
            hits += 1;
        }
    }
    c.truth("oracle_reads_renders", hits == cases.len());
    Ok(())
}

fn model_checks(c: &mut Checks, run: &Run, p: &SelftestParams) -> CliResult<()> {
    let mut model = ToyModel::new(UNetConfig::micro5(), Vocabulary::toy(), NoiseSchedule::default(), run.seed)?;
    let items = corpus_items(&CorpusConfig {
        images: p.images,
        seed: run.seed,
        ..CorpusConfig::default()
    })?;
    let data = render_examples(&items, model.config().image_size)?;
    let losses = pretrain(
        &mut model,
        &data,
        &PretrainConfig {
            steps: p.pretrain_steps,
            seed: run.seed,
            ..PretrainConfig::default()
        },
        |_, _| {},
    )?;
    let head = losses.iter().take(20).sum::<f64>() / 20f64.min(losses.len() as f64);
    let tail = losses.iter().rev().take(20).sum::<f64>() / 20f64.min(losses.len() as f64);
    c.truth("pretrain_loss_decreases", tail < head);
    let ckpt = checkpoint::to_bytes(&model)?;
    run.write("model.ckpt", &ckpt)?;
    let back = checkpoint::from_bytes(&ckpt)?;
    c.truth(
        "checkpoint_round_trip",
        back.params().checksum() == model.params().checksum() && checkpoint::to_bytes(&back)? == ckpt,
    );

    // forward noising against the closed form
    let sched = model.schedule();
    let x0 = Tensor::new([4], wave(4, 3.0))?;
    let eps = Tensor::new([4], wave(4, 9.0))?;
    let mut fw: f64 = 0.0;
    for t in [1usize, 10, 500, 1000] {
        let ab: f64 = (1..=t)
            .map(|s| 1.0 - (1e-4 + (s - 1) as f64 / 999.0 * (2e-2 - 1e-4)))
            .product();
        let got = sched.forward_noise(&x0, t, &eps)?;
        for i in 0..4 {
            fw = fw.max((got.data()[i] - (ab.sqrt() * x0.data()[i] + (1.0 - ab).sqrt() * eps.data()[i])).abs());
        }
    }
    c.at_most("forward_noise_closed_form", fw, 1e-12);

    // guidance identities
    let x = Tensor::new(model.image_shape().to_vec(), wave(3 * 16 * 16, 0.5))?;
    let prompt = model.plain_prompt("red square, solid")?;
    let cond = model.predict_noise(&x, 400, &prompt)?;
    let unc = model.predict_noise(&x, 400, &model.empty_prompt())?;
    c.at_most("cfg_w1_is_cond", max_diff(&model.cfg_predict(&x, 400, &prompt, 1.0)?, &cond), 1e-12);
    c.at_most("cfg_w0_is_uncond", max_diff(&model.cfg_predict(&x, 400, &prompt, 0.0)?, &unc), 1e-12);
    let g75 = model.cfg_predict(&x, 400, &prompt, 7.5)?;
    let affine: Vec<f64> = unc.data().iter().zip(cond.data()).map(|(u, c)| u + 7.5 * (c - u)).collect();
    c.at_most("cfg_w7_5_affine", max_diff(&g75, &Tensor::new(unc.shape().to_vec(), affine)?), 1e-12);

    // degenerate conditioning
    let sampler = SamplerConfig {
        steps: p.sample_steps,
        guidance: 7.5,
        seed: run.seed,
    };
    let ext = ddim_sample(&model, &prompt, &sampler)?;
    let single = ddim_sample_single(&model, &model.tokenize("red square, solid")?, &sampler)?;
    c.truth("broadcast_equals_single_prompt", ext.bit_eq(&single));
    let other = model.plain_prompt("blue circle, stripes")?;
    let mixed = mix_extended(&prompt, &prompt, MixSpec::new(1, 3, model.registry().len())?)?;
    c.truth("mix_p_p_equals_p", ddim_sample(&model, &mixed, &sampler)?.bit_eq(&ext));
    let all = LayerSubset::new(model.registry().layers().to_vec());
    let full = other.mix_subset(&prompt, &all)?;
    c.truth("mix_full_range_equals_q", ddim_sample(&model, &full, &sampler)?.bit_eq(&ext));
    run.write_png("sample.png", &ext)?;

    // per-layer embedding gradients
    let size = model.config().image_size;
    let images = make_concept("diamond", "orange", "solid", 2, 100, size)?;
    let tpl = vec![model.tokenize("a photo of <token>")?];
    let base = embed_init(&model, &InitStrategy::CoarseWord("diamond".into()), Mode::Xti)?;
    let emb: Vec<Vec<f64>> = base
        .iter()
        .enumerate()
        .map(|(i, e)| e.iter().zip(wave(e.len(), i as f64)).map(|(a, b)| a + 0.01 * b).collect())
        .collect();
    let d = Draw {
        image: 1,
        template: 0,
        t: 300,
        noise_seed: 9,
    };
    let gc = embedding_gradient_check(&model, &images, &tpl, &emb, d, 1e-2, Stencil::FivePoint)?;
    c.below("xti_grad_max_rel", gc.iter().map(|g| g.max_rel_error).fold(0.0, f64::max), 1e-6);
    c.below("xti_grad_norm_rel", gc.iter().map(|g| g.norm_rel_error).fold(0.0, f64::max), 1e-6);

    // tied embeddings: TI is XTI with every layer sharing one vector
    let tied = vec![base[0].clone(); base.len()];
    let (lx, gx) = draw_loss(&model, &images, &tpl, &tied, d, true)?;
    let (lt, gt) = draw_loss(&model, &images, &tpl, &base[..1], d, true)?;
    c.at_most("tied_xti_loss_equals_ti", (lx - lt).abs(), 1e-15);
    let summed: Vec<f64> = (0..gt[0].len()).map(|j| gx.iter().map(|g| g[j]).sum()).collect();
    let scale = gt[0].iter().fold(0f64, |a, v| a.max(v.abs())).max(1e-300);
    let gdiff = summed.iter().zip(&gt[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    c.at_most("tied_xti_grad_sum_equals_ti", gdiff, 1e-12);

    // inversion leaves the model untouched
    let before = model.params().checksum();
    for mode in [Mode::Ti, Mode::Xti] {
        let cfg = InversionConfig {
            steps: p.invert_steps,
            batch: 2,
            probe_draws: 4,
            seed: run.seed,
            ..InversionConfig::new(mode)
        };
        let concept = invert(&model, &images, &cfg, None, |_, _| {})?;
        let text = concept_to_string(&concept)?;
        let again = concept_to_string(&concept_from_str(&text)?)?;
        c.truth(&format!("concept_round_trip_{}", mode.as_str().to_lowercase()), text == again);
        run.write(&format!("concept_{}.txt", mode.as_str().to_lowercase()), text.as_bytes())?;
    }
    c.truth("invert_keeps_checksum", model.params().checksum() == before);
    Ok(())
}

pub fn selftest_cmd(run: &Run, p: &SelftestParams) -> CliResult<()> {
    let mut c = Checks::default();
    tensor_checks(&mut c)?;
    routing_checks(&mut c)?;
    density_checks(&mut c)?;
    attention_checks(&mut c)?;
    oracle_checks(&mut c)?;
    model_checks(&mut c, run, p)?;
    let rows: Vec<Vec<String>> = c
        .0
        .iter()
        .map(|k| vec![k.check.clone(), k.passed.to_string(), format!("{:e}", k.value), k.threshold.clone()])
        .collect();
    run.write_csv("selftest.csv", &["check", "passed", "value", "threshold"], &rows)?;
    let failed = c.0.iter().filter(|k| !k.passed).count();
    run.write_json(
        "summary.json",
        &serde_json::json!({"checks": c.0.len(), "failed": failed, "results": c.0}),
    )?;
    for k in &c.0 {
        println!("{} {}", if k.passed { "ok  " } else { "FAIL" }, k.check);
    }
    if failed > 0 {
        return Err(Failure::Selftest(failed));
    }
    Ok(())
}
