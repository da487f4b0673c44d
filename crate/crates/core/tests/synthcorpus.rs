use std::collections::BTreeSet;

use pplus_core::synthcorpus::scene::{colors, shapes, textures};
use pplus_core::synthcorpus::{
    attribute_oracle, corpus_items, default_held_out, make_concept, manifest_pair_counts, render, render_at,
    write_manifest, CorpusConfig, SceneSpec,
};

fn spec(shape: &str, color: &str, texture: &str) -> SceneSpec {
    SceneSpec { shape: shape.into(), color: color.into(), texture: texture.into(), cx: 15, cy: 17, half: 8, seed: 3 }
}

#[test]
fn corpus_is_deterministic_and_excludes_held_out_pairs() {
    let cfg = CorpusConfig { images: 300, min_per_pair: 2, ..CorpusConfig::default() };
    let a = corpus_items(&cfg).unwrap();
    assert_eq!(a, corpus_items(&cfg).unwrap());
    assert!(a.len() >= 300);
    let held: BTreeSet<(String, String)> = default_held_out().into_iter().collect();
    assert!(a.iter().all(|i| !held.contains(&(i.spec.shape.clone(), i.spec.color.clone()))));
    let pairs: BTreeSet<_> = a.iter().map(|i| (i.spec.shape.clone(), i.spec.color.clone())).collect();
    assert_eq!(pairs.len(), shapes().len() * colors().len() - held.len());
    let other = corpus_items(&CorpusConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn manifest_counts_pairs() {
    let cfg = CorpusConfig { images: 100, min_per_pair: 3, ..CorpusConfig::default() };
    let items = corpus_items(&cfg).unwrap();
    let files: Vec<String> = (0..items.len()).map(|i| format!("{i}.png")).collect();
    let mut buf = Vec::new();
    write_manifest(&items, &files, &mut buf).unwrap();
    let counts = manifest_pair_counts(&buf[..]).unwrap();
    assert!(counts.values().all(|&c| c >= 3));
    assert_eq!(counts.values().sum::<usize>(), items.len());
}

#[test]
fn renders_are_deterministic_and_in_range() {
    let s = spec("triangle", "yellow", "stripes");
    let a = render(&s).unwrap();
    assert!(a.bit_eq(&render(&s).unwrap()));
    assert_eq!(a.shape(), &[3, 32, 32]);
    assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(render_at(&s, 16).unwrap().shape(), &[3, 16, 16]);
    assert!(render_at(&s, 24).is_err());
    assert!(render(&spec("hexagon", "red", "solid")).is_err());
}

#[test]
fn oracle_recovers_every_attribute_at_full_size() {
    for sh in shapes() {
        for c in colors() {
            for t in textures() {
                let a = attribute_oracle(&render(&spec(sh, c, t)).unwrap());
                assert_eq!((a.shape.value.as_str(), a.color.value.as_str(), a.texture.value.as_str()), (sh, c, t));
            }
        }
    }
}

#[test]
fn concept_sets_vary_placement_only() {
    let imgs = make_concept("cross", "purple", "solid", 4, 9, 16).unwrap();
    assert_eq!(imgs.len(), 4);
    assert!(!imgs[0].bit_eq(&imgs[1]));
    for i in &imgs {
        let a = attribute_oracle(i);
        assert_eq!(a.color.value, "purple");
    }
    assert!(make_concept("cross", "purple", "solid", 0, 9, 16).is_err());
}
