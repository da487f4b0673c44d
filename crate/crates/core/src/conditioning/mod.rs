//! Tokenization, the text encoder, per-layer prompts and layer naming.

pub mod encoder;
pub mod layers;
pub mod prompt;
pub mod vocab;
pub mod wordlists;

pub use encoder::{EncoderConfig, LookupTable, TextEncoder};
pub use layers::{Direction, LayerId, LayerRegistry, LayerSubset};
pub use prompt::{mix_extended, ExtendedPrompt, LayerSpec, MixSpec, Override};
pub use vocab::{PromptTemplate, TokenId, Vocabulary, BOS, EOS, PAD, PLACEHOLDER};
