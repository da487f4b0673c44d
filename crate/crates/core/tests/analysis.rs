use pplus_core::analysis::{
    attention_ratio, cosine, labeled_prompt, ratio_table, span_mass, subject_similarity, subset_sweep,
    text_similarity, AttentionRecord, AttributeSim, Embedder, Pattern, RatioOptions, SpanReduce, SubsetSweepReport,
    SweepPrompt, SweepRow, TokenRole, ToyEmbedder,
};
use pplus_core::conditioning::{LayerRegistry, Vocabulary};
use pplus_core::diffusion::{NoiseSchedule, SamplerConfig, ToyModel, UNetConfig};
use pplus_core::synthcorpus::{render, SceneSpec};

use TokenRole::*;

fn record(reg: &LayerRegistry, layer: usize, w: &[f64], roles: &[TokenRole]) -> AttentionRecord {
    let rows: Vec<f64> = w.iter().chain(w).chain(w).copied().collect();
    AttentionRecord::from_heads(reg.layers()[layer], 10, &[(&rows, 3, w.len())], roles.to_vec()).unwrap()
}

#[test]
fn equal_mass_gives_ratio_one() {
    let reg = LayerRegistry::reference();
    let roles = [Special, Appearance, Object, Special];
    let t = ratio_table(&reg, &[record(&reg, 3, &[0.4, 0.2, 0.2, 0.2], &roles)], RatioOptions::default()).unwrap();
    assert!((t[3].ratio.unwrap() - 1.0).abs() <= 1e-9);
    assert!(t.iter().enumerate().all(|(i, r)| i == 3 || r.ratio.is_none()));
}

#[test]
fn doubled_object_mass_at_one_layer() {
    let reg = LayerRegistry::reference();
    let roles = [Special, Appearance, Object, Special];
    let recs = [
        record(&reg, 0, &[0.1, 0.3, 0.3, 0.3], &roles),
        record(&reg, 7, &[0.1, 0.2, 0.4, 0.3], &roles),
    ];
    let t = ratio_table(&reg, &recs, RatioOptions::default()).unwrap();
    assert!((t[7].ratio.unwrap() - 2.0).abs() <= 1e-9);
    assert!((t[0].ratio.unwrap() - 1.0).abs() <= 1e-9);
}

#[test]
fn span_options() {
    let reg = LayerRegistry::reference();
    let roles = [Special, Appearance, Appearance, Object, Special];
    let r = record(&reg, 0, &[0.2, 0.1, 0.3, 0.2, 0.2], &roles);
    let base = RatioOptions::default();
    assert!((span_mass(&r, Appearance, base).unwrap() - 0.4 / 0.6 / 2.0).abs() < 1e-15);
    let sum = RatioOptions { span: SpanReduce::Sum, ..base };
    assert!((span_mass(&r, Appearance, sum).unwrap() - 0.4 / 0.6).abs() < 1e-15);
    let special = RatioOptions { include_special: true, ..sum };
    assert!((span_mass(&r, Object, special).unwrap() - 0.2).abs() < 1e-15);
    assert!(span_mass(&r, Other, base).is_none());
}

#[test]
fn records_reject_bad_shapes() {
    let reg = LayerRegistry::reference();
    let w = [0.5, 0.5];
    assert!(AttentionRecord::from_heads(reg.layers()[0], 1, &[(&w, 1, 2)], vec![Object]).is_err());
    assert!(AttentionRecord::from_heads(reg.layers()[0], 1, &[], vec![Object]).is_err());
}

fn model() -> ToyModel {
    ToyModel::new(UNetConfig::micro5(), Vocabulary::toy(), NoiseSchedule::default(), 2).unwrap()
}

#[test]
fn prompt_roles() {
    let m = model();
    let (_, roles) = labeled_prompt(&m, "red", "square", Pattern::AppearanceObject).unwrap();
    assert_eq!(&roles[..4], &[Special, Appearance, Object, Special]);
    let (_, roles) = labeled_prompt(&m, "red", "square", Pattern::ObjectAppearance).unwrap();
    assert_eq!(&roles[..5], &[Special, Object, Other, Appearance, Special]);
}

#[test]
fn ratio_report_covers_every_layer() {
    let m = model();
    let pairs = vec![("red".to_string(), "square".to_string()), ("zebra".to_string(), "circle".to_string())];
    let cfg = SamplerConfig { steps: 2, ..SamplerConfig::default() };
    let r = attention_ratio(&m, &pairs, &[0], &cfg, RatioOptions::default()).unwrap();
    assert_eq!(r.prompts_used, 2);
    assert_eq!(r.prompts_skipped, 2);
    assert_eq!(r.rows.len(), m.registry().len());
    assert!(r.rows.iter().all(|l| l.records == 4 && l.ratio.is_some()));
    assert!(r.coarse_mean.is_finite() && r.fine_mean.is_finite());
}

fn scene(shape: &str, color: &str) -> SceneSpec {
    SceneSpec { shape: shape.into(), color: color.into(), texture: "solid".into(), cx: 16, cy: 16, half: 9, seed: 0 }
}

#[test]
fn toy_embedder_ranks_matching_text_and_subjects() {
    let e = ToyEmbedder::default();
    let red_sq = render(&scene("square", "red")).unwrap();
    let blue_ci = render(&scene("circle", "blue")).unwrap();
    let v = e.embed_image(&red_sq).unwrap();
    assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
    assert!(cosine(&v, &e.embed_text("red square").unwrap()) > cosine(&v, &e.embed_text("blue circle").unwrap()));
    let same = subject_similarity(std::slice::from_ref(&red_sq), std::slice::from_ref(&red_sq), &e).unwrap();
    let diff = subject_similarity(std::slice::from_ref(&red_sq), &[blue_ci], &e).unwrap();
    assert!(same > diff);
    assert!(text_similarity(std::slice::from_ref(&red_sq), "a photo of a red square", &e).unwrap() > 0.0);
    assert!(subject_similarity(&[], &[red_sq], &e).is_err());
}

fn row(subset: usize, obj: bool, color: bool) -> SweepRow {
    let s = |b: bool| AttributeSim { to_first: 0.5, to_second: if b { 0.6 } else { 0.4 } };
    SweepRow { subset, layers: String::new(), attributes: Some([s(obj), s(color), s(false)]) }
}

#[test]
fn crossover_order() {
    let r = SubsetSweepReport { rows: vec![row(0, false, false), row(1, true, false), row(2, true, true)] };
    assert_eq!((r.crossover(0), r.crossover(1)), (Some(1), Some(2)));
    assert!(r.object_before_color());
    let late = SubsetSweepReport { rows: vec![row(0, false, true), row(1, true, true)] };
    assert!(!late.object_before_color());
}

#[test]
fn sweep_produces_one_row_per_subset() {
    let m = model();
    let pairs = vec![(SweepPrompt::new("red", "square", "solid"), SweepPrompt::new("blue", "circle", "stripes"))];
    let cfg = SamplerConfig { steps: 2, ..SamplerConfig::default() };
    let (rep, imgs) = subset_sweep(&m, &pairs, &[0, 1], &cfg, &ToyEmbedder::default()).unwrap();
    let n = m.registry().subset_sequence().len();
    assert_eq!(rep.rows.len(), n);
    assert_eq!(imgs.len(), n);
    assert!(imgs.iter().all(|v| v.len() == 2));
    assert!(rep.rows.iter().all(|r| r.attributes.is_some()));
    assert!(subset_sweep(&m, &[], &[0], &cfg, &ToyEmbedder::default()).is_err());
}
