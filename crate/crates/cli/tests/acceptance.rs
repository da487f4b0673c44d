//! One pass/fail line per acceptance criterion; criterion 10 is reported only.
//! Failures of criteria 1-9 make the run exit nonzero when
//! PPLUS_ACCEPTANCE_STRICT=1.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pplus_cli::commands::{pretrain_cmd, ratio_pairs, sweep_pairs, PretrainParams};
use pplus_cli::run::Run;
use pplus_core::analysis::{
    attention_ratio, ratio_table, subject_similarity_of, subset_sweep, AttentionRecord, RatioOptions, TokenRole,
    ToyEmbedder,
};
use pplus_core::conditioning::{mix_extended, LayerId, LayerRegistry, MixSpec};
use pplus_core::density::{median, Bandwidth, DensityModel};
use pplus_core::diffusion::sample::gaussian;
use pplus_core::diffusion::{checkpoint, ddim_sample, ddim_sample_single, SamplerConfig, ToyModel};
use pplus_core::inversion::{embed_init, embedding_gradient_check, invert, Draw, InitStrategy, InversionConfig, Mode};
use pplus_core::synthcorpus::make_concept;
use pplus_core::tensor::opsuite::op_gradient_suite;
use pplus_core::tensor::{Stencil, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ------------------------------------------------------------ 1 degeneracy

fn degeneracy(m: &ToyModel) -> Outcome {
    let start = Instant::now();
    let words = ["red", "blue", "green", "square", "circle", "triangle", "stripes", "solid", "checker", "purple", "cross"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = m.registry().len();
    let (mut broadcast_ok, mut mix_ok) = (0, 0);
    for _ in 0..20 {
        let len = rng.random_range(1..=4);
        let text = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ");
        let cfg = SamplerConfig {
            steps: rng.random_range(1..=50),
            guidance: 7.5,
            seed: rng.random(),
        };
        let p = m.plain_prompt(&text).unwrap();
        let a = ddim_sample(m, &p, &cfg).unwrap();
        let b = ddim_sample_single(m, &m.tokenize(&text).unwrap(), &cfg).unwrap();
        broadcast_ok += a.bit_eq(&b) as usize;
        let k = rng.random_range(1..n);
        let big_k = rng.random_range(k + 1..=n);
        let mixed = mix_extended(&p, &p, MixSpec::new(k, big_k, n).unwrap()).unwrap();
        mix_ok += ddim_sample(m, &mixed, &cfg).unwrap().bit_eq(&a) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        broadcast_ok == 20 && mix_ok == 20 && secs < 120.0,
        format!("broadcast==single {broadcast_ok}/20, mix(p,p)==p {mix_ok}/20, {secs:.1}s"),
    )
}

// ------------------------------------------------------------ 2 gradients

fn gradients(m: &ToyModel) -> Outcome {
    let start = Instant::now();
    let (mut ops_rel, mut ops_norm, mut checks) = (0f64, 0f64, 0);
    for seed in 0..5 {
        for c in op_gradient_suite(seed).unwrap() {
            ops_rel = ops_rel.max(c.max_rel_error);
            ops_norm = ops_norm.max(c.norm_rel_error);
            checks += 1;
        }
    }
    let images = make_concept("diamond", "orange", "solid", 3, 100, m.config().image_size).unwrap();
    let templates = vec![m.tokenize("a photo of <token>").unwrap(), m.tokenize("a rendering of <token>").unwrap()];
    let base = embed_init(m, &InitStrategy::CoarseWord("diamond".into()), Mode::Xti).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let emb: Vec<Vec<f64>> = base
        .iter()
        .map(|e| e.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect())
        .collect();
    let (mut xr, mut xn, mut xa, mut layers) = (0f64, 0f64, 0f64, 0);
    for (i, t) in [(0, 60), (1, 400), (2, 850)] {
        let d = Draw {
            image: i,
            template: i % 2,
            t,
            noise_seed: 1000 + t as u64,
        };
        for c in embedding_gradient_check(m, &images, &templates, &emb, d, 1e-2, Stencil::FivePoint).unwrap() {
            xr = xr.max(c.max_rel_error);
            xn = xn.max(c.norm_rel_error);
            xa = xa.max(c.max_abs_error);
            layers += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ops_rel < 1e-6 && ops_norm < 1e-6 && xr < 1e-6 && xn < 1e-6 && secs < 300.0,
        format!(
            "{checks} op inputs max rel {ops_rel:.1e} (norm {ops_norm:.1e}); {layers} per-layer embeddings max rel {xr:.1e} (norm {xn:.1e}, max abs {xa:.1e}); {secs:.1}s"
        ),
    )
}

// ------------------------------------------------------------ 3 KDE

fn kde() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cloud = |n: usize, d: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
    };
    let pts = cloud(100, 8);
    let queries = cloud(20, 8);
    let shift = cloud(1, 8).remove(0);
    let n = pts.len() as f64;
    let h: Vec<f64> = (0..8)
        .map(|k| {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = pts.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            n.powf(-0.2) * var.sqrt()
        })
        .collect();
    let brute = |x: &[f64]| -> f64 {
        (0..8)
            .map(|k| {
                let s: f64 =
                    pts.iter().map(|p| (-0.5 * ((x[k] - p[k]) / h[k]).powi(2)).exp() / (h[k] * (2.0 * PI).sqrt())).sum();
                (s / n).ln()
            })
            .sum()
    };
    let dm = DensityModel::fit_points(pts.clone(), Bandwidth::Scott).unwrap();
    let err = queries.iter().map(|q| (dm.log_density(q).unwrap() - brute(q)).abs()).fold(0.0, f64::max);
    let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
    let dm2 = DensityModel::fit_points(moved, Bandwidth::Scott).unwrap();
    let trans = queries
        .iter()
        .map(|q| {
            let qs: Vec<f64> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
            (dm.log_density(q).unwrap() - dm2.log_density(&qs).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    let hh = 0.42;
    let single = DensityModel::fit_points(vec![vec![-0.3]; 2], Bandwidth::Fixed(hh)).unwrap();
    let one = (single.log_density(&[-0.3]).unwrap() + (hh * (2.0 * PI).sqrt()).ln()).abs();
    outcome(
        err <= 1e-12 && trans <= 1e-10 && one <= 1e-12,
        format!("brute force {err:.1e}, translation {trans:.1e}, single point {one:.1e}"),
    )
}

// ------------------------------------------------------------ 4 routing goldens

fn routing() -> Outcome {
    let golden = [
        "Empty set",
        "Layer (8, 'down', 0) only",
        "(16, 'down', 1) - (8, 'down', 0)",
        "(16, 'down', 1) - (16, 'up', 0)",
        "(16, 'down', 0) - (16, 'up', 0)",
        "(16, 'down', 0) - (16, 'up', 1)",
        "(16, 'down', 0) - (16, 'up', 2)",
        "(64, 'down', 0) - (64, 'up', 2)",
    ];
    let reg = LayerRegistry::reference();
    let got: Vec<String> = reg.subset_sequence().iter().map(|s| reg.describe(s)).collect();
    let subsets_ok = got == golden;
    let mut names = Vec::new();
    for (res, k) in [(64, 2), (32, 2), (16, 2)] {
        names.extend((0..k).map(|i| format!("({res}, 'down', {i})")));
    }
    names.push("(8, 'down', 0)".to_string());
    for res in [16, 32, 64] {
        names.extend((0..3).map(|i| format!("({res}, 'up', {i})")));
    }
    let round = names.iter().filter(|n| n.parse::<LayerId>().map(|l| l.to_string() == **n).unwrap_or(false)).count();
    let three = reg.parse_selection("(16,'down',1)-(16,'up',0)").map(|s| s.len()).unwrap_or(0);
    let two = reg.parse_selection("(8,'down',0),(16,'up',0)").map(|s| s.len()).unwrap_or(0);
    outcome(
        subsets_ok && round == 16 && reg.to_names() == names && three == 3 && two == 2,
        format!("subsets 0-7 {}, round trips {round}/16, range {three}, list {two}", if subsets_ok { "match" } else { "differ" }),
    )
}

// ------------------------------------------------------------ 5 attention fixtures

fn attention_fixtures() -> Outcome {
    use TokenRole::*;
    let reg = LayerRegistry::reference();
    let roles = vec![Special, Appearance, Object, Other, Special];
    let rec = |layer: usize, w: [f64; 5]| {
        let rows: Vec<f64> = (0..4).flat_map(|_| w).collect();
        let h2: Vec<f64> = (0..4).flat_map(|_| w).collect();
        AttentionRecord::from_heads(reg.layers()[layer], 500, &[(&rows, 4, 5), (&h2, 4, 5)], roles.clone()).unwrap()
    };
    let equal = ratio_table(&reg, &[rec(2, [0.1, 0.3, 0.3, 0.2, 0.1])], RatioOptions::default()).unwrap();
    let e = (equal[2].ratio.unwrap_or(f64::NAN) - 1.0).abs();
    let table = ratio_table(
        &reg,
        &[rec(9, [0.1, 0.2, 0.4, 0.2, 0.1]), rec(2, [0.1, 0.3, 0.3, 0.2, 0.1])],
        RatioOptions::default(),
    )
    .unwrap();
    let d = (table[9].ratio.unwrap_or(f64::NAN) - 2.0).abs();
    let others = (table[2].ratio.unwrap_or(f64::NAN) - 1.0).abs();
    outcome(e <= 1e-9 && d <= 1e-9 && others <= 1e-9, format!("equal mass |r-1| {e:.1e}, single layer |r-2| {d:.1e}"))
}

// ------------------------------------------------------------ 6/7 XTI vs TI

struct Comparison {
    rows: Vec<(String, f64, f64, f64, f64)>,
    checksum_ok: bool,
    secs: f64,
    concepts: BTreeMap<&'static str, Vec<pplus_core::inversion::InvertedConcept>>,
}

fn compare(m: &ToyModel) -> Comparison {
    let start = Instant::now();
    let before = m.params().checksum();
    let sampler = SamplerConfig::default();
    let seeds = [0, 1, 2, 3];
    let mut rows = Vec::new();
    let mut concepts: BTreeMap<&'static str, Vec<_>> = BTreeMap::new();
    for (i, (shape, color)) in [("diamond", "orange"), ("cross", "purple"), ("circle", "pink")].iter().enumerate() {
        let images = make_concept(shape, color, "solid", 5, 100 + i as u64, m.config().image_size).unwrap();
        let mut res = Vec::new();
        for mode in [Mode::Ti, Mode::Xti] {
            let cfg = InversionConfig {
                steps: 300,
                lr: 0.005,
                seed: 7,
                init: InitStrategy::CoarseWord(shape.to_string()),
                ..InversionConfig::new(mode)
            };
            let c = invert(m, &images, &cfg, None, |_, _| {}).unwrap();
            let sim = subject_similarity_of(m, &c, &images, &seeds, &sampler, &ToyEmbedder::default()).unwrap();
            res.push((c.final_loss, sim));
            concepts.entry(if mode == Mode::Ti { "TI" } else { "XTI" }).or_default().push(c);
        }
        rows.push((format!("{color} {shape}"), res[0].0, res[1].0, res[0].1, res[1].1));
    }
    Comparison {
        rows,
        checksum_ok: m.params().checksum() == before,
        secs: start.elapsed().as_secs_f64(),
        concepts,
    }
}

fn xti_vs_ti(c: &Comparison) -> Outcome {
    let loss_wins = c.rows.iter().filter(|r| r.2 <= r.1).count();
    let sim_wins = c.rows.iter().filter(|r| r.4 >= r.3).count();
    let detail: Vec<String> = c
        .rows
        .iter()
        .map(|(n, lt, lx, st, sx)| format!("{n}: loss TI {lt:.4} XTI {lx:.4}, sim TI {st:.4} XTI {sx:.4}"))
        .collect();
    outcome(
        loss_wins >= 2 && sim_wins >= 2 && c.secs < 900.0,
        format!("loss {loss_wins}/3, similarity {sim_wins}/3, {:.0}s; {}", c.secs, detail.join("; ")),
    )
}

// ------------------------------------------------------------ 8 guidance

fn guidance(m: &ToyModel) -> Outcome {
    let mut worst = [0f64; 3];
    for (i, (text, t)) in [("red square, solid", 10), ("a photo of a blue circle", 500), ("green cross", 990)]
        .iter()
        .enumerate()
    {
        let x = gaussian(&m.image_shape(), &mut ChaCha8Rng::seed_from_u64(i as u64));
        let p = m.plain_prompt(text).unwrap();
        let c = m.predict_noise(&x, *t, &p).unwrap();
        let u = m.predict_noise(&x, *t, &m.empty_prompt()).unwrap();
        worst[0] = worst[0].max(m.cfg_predict(&x, *t, &p, 1.0).unwrap().max_abs_diff(&c));
        worst[1] = worst[1].max(m.cfg_predict(&x, *t, &p, 0.0).unwrap().max_abs_diff(&u));
        let affine: Vec<f64> = u.data().iter().zip(c.data()).map(|(u, c)| u + 7.5 * (c - u)).collect();
        let want = Tensor::new(u.shape().to_vec(), affine).unwrap();
        worst[2] = worst[2].max(m.cfg_predict(&x, *t, &p, 7.5).unwrap().max_abs_diff(&want));
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-12),
        format!("w=1 {:.1e}, w=0 {:.1e}, w=7.5 {:.1e}", worst[0], worst[1], worst[2]),
    )
}

// ------------------------------------------------------------ 9 determinism

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_pplus");
    let first = tmp.join("selftest_a");
    let second = tmp.join("selftest_b");
    let a = Command::new(bin).args(["selftest", "--seed", "5", "--out"]).arg(&first).output().unwrap();
    let echo = first.join("config.json");
    let b = Command::new(bin).args(["selftest", "--config"]).arg(&echo).arg("--out").arg(&second).output().unwrap();
    let (ta, tb) = (tree(&first), tree(&second));
    let same = ta == tb;
    outcome(
        a.status.success() && b.status.success() && same && !ta.is_empty(),
        format!(
            "exit {:?}/{:?}, {} files, trees {}, {:.0}s",
            a.status.code(),
            b.status.code(),
            ta.len(),
            if same { "identical" } else { "differ" },
            start.elapsed().as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------ 10 reported

fn reported(m: &ToyModel, c: &Comparison) -> String {
    let sampler = SamplerConfig::default();
    let ratio = attention_ratio(m, &ratio_pairs("toy", 8).unwrap(), &[0, 1], &sampler, RatioOptions::default()).unwrap();
    let (sweep, _) = subset_sweep(m, &sweep_pairs(2), &[0, 1], &sampler, &ToyEmbedder::default()).unwrap();
    let dm = DensityModel::fit(&m.lookup_table(), Bandwidth::Scott).unwrap();
    let med = |mode: &str| {
        let v: Vec<f64> = c.concepts[mode]
            .iter()
            .flat_map(|k| k.embeddings.iter().map(|e| dm.log_density(e).unwrap()).collect::<Vec<_>>())
            .collect();
        median(&v)
    };
    let (ti, xti) = (med("TI"), med("XTI"));
    let show = |o: Option<usize>| o.map_or("none".to_string(), |v| v.to_string());
    format!(
        "coarse>fine {} ({:.3} vs {:.3}); object-before-color {} (object {}, color {}); median log p XTI>=TI {} ({xti:.2} vs {ti:.2})",
        ratio.coarse_exceeds_fine(),
        ratio.coarse_mean,
        ratio.fine_mean,
        sweep.object_before_color(),
        show(sweep.crossover(0)),
        show(sweep.crossover(1)),
        xti >= ti
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lines: Vec<(usize, &str, Option<Outcome>)> = Vec::new();
    lines.push((3, "kde", Some(kde())));
    lines.push((4, "routing goldens", Some(routing())));
    lines.push((5, "attention fixtures", Some(attention_fixtures())));

    eprintln!("pretraining the shared micro-5 model...");
    let start = Instant::now();
    let run = Run::start(tmp.path().join("pretrain"), "pretrain", 0, &PretrainParams::default()).unwrap();
    pretrain_cmd(&run, &PretrainParams::default()).unwrap();
    let m = checkpoint::load(&run.path("model.ckpt")).unwrap();
    eprintln!("pretrained in {:.0}s", start.elapsed().as_secs_f64());

    lines.push((1, "degeneracy", Some(degeneracy(&m))));
    lines.push((2, "gradients", Some(gradients(&m))));
    let cmp = compare(&m);
    lines.push((6, "xti vs ti", Some(xti_vs_ti(&cmp))));
    lines.push((
        7,
        "frozen model",
        Some(outcome(cmp.checksum_ok, format!("checksum {:016x} after 6 inversions", m.params().checksum()))),
    ));
    lines.push((8, "cfg identities", Some(guidance(&m))));
    lines.push((9, "determinism", Some(determinism(tmp.path()))));
    let report = reported(&m, &cmp);
    lines.sort_by_key(|l| l.0);

    let mut failed = 0;
    for (id, name, o) in &lines {
        let o = o.as_ref().unwrap();
        failed += !o.pass as usize;
        println!("criterion {id} {name}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("criterion 10 reported: REPORT {report}");
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var("PPLUS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
