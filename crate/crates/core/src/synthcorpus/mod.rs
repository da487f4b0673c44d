//! Procedural captioned shapes, held-out concepts and an attribute oracle.

pub mod corpus;
pub mod oracle;
pub mod scene;

pub use corpus::{
    corpus_items, default_held_out, make_concept, manifest_pair_counts, render_examples, write_manifest,
    CaptionForm, CorpusConfig, CorpusItem,
};
pub use oracle::{attribute_oracle, attribute_scores, AttributeScores, Attributes, Label};
pub use scene::{render, render_at, SceneSpec};
