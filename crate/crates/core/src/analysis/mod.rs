//! Attention instrumentation, the attribute sweep and similarity metrics.

pub mod attention;
pub mod embed;
pub mod sweep;

pub use attention::{
    attention_ratio, labeled_prompt, ratio_table, span_mass, AttentionRecord, LayerRatio, Pattern, RatioOptions,
    RatioReport, SpanReduce, TokenRole,
};
pub use embed::{cosine, subject_similarity, text_similarity, unit, Embedder, ToyEmbedder};
pub use sweep::{
    concept_samples, evaluate_concept, subject_similarity_of, subset_sweep, AttributeSim, ConceptEval, PromptScore,
    SubsetSweepReport, SweepPrompt, SweepRow, ATTRIBUTES,
};
