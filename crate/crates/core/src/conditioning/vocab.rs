use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::wordlists;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

/// Written in prompt text where the learned embedding goes.
pub const PLACEHOLDER: &str = "<token>";

/// Word-level vocabulary.
///
/// Ids are dense: PAD, BOS, EOS, then natural words in insertion order, then
/// placeholder tokens. Natural ids never change once assigned and placeholder
/// ids always come after every natural id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    natural: usize,
    max_len: usize,
}

impl Vocabulary {
    pub fn new(words: impl IntoIterator<Item = String>, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::InvalidArgument("max_len must hold BOS and EOS".into()));
        }
        let mut v = Vocabulary {
            words: vec!["<pad>".into(), "<bos>".into(), "<eos>".into()],
            index: HashMap::new(),
            natural: 3,
            max_len,
        };
        for w in words {
            let w = w.to_lowercase();
            if w.is_empty() || w.starts_with('<') || v.index.contains_key(&w) {
                continue;
            }
            v.index.insert(w.clone(), v.words.len());
            v.words.push(w);
        }
        v.natural = v.words.len();
        v.add_placeholder(PLACEHOLDER);
        Ok(v)
    }

    /// Vocabulary built from every shipped word list.
    pub fn toy() -> Self {
        let words = wordlists::all_vocabulary_words();
        Vocabulary::new(words, 12).expect("static word lists")
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .skip(3)
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    /// Restores the lookup map after deserialization.
    pub fn reindexed(mut self) -> Self {
        self.rebuild_index();
        self
    }

    /// Appends a placeholder token `name` and returns its id.
    pub fn add_placeholder(&mut self, name: &str) -> TokenId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.words.len();
        self.words.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of natural ids (specials and words, no placeholders).
    pub fn natural_len(&self) -> usize {
        self.natural
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_placeholder(&self, id: TokenId) -> bool {
        id >= self.natural && id < self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(&word.to_lowercase()).copied()
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Tokenizes `text` into a BOS/EOS framed, PAD-filled template.
    ///
    /// Words are split on whitespace; commas are separate tokens. Any
    /// placeholder token marks the (single) slot for a learned embedding.
    pub fn tokenize(&self, text: &str) -> Result<PromptTemplate> {
        let mut ids = vec![BOS];
        let mut slot = None;
        for w in split_words(text) {
            let id = self.id(&w).ok_or_else(|| Error::UnknownWord(w.clone()))?;
            if self.is_placeholder(id) {
                if slot.is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "prompt {text:?} has more than one placeholder"
                    )));
                }
                slot = Some(ids.len());
            }
            ids.push(id);
        }
        ids.push(EOS);
        if ids.len() > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "prompt {text:?} needs {} tokens, limit is {}",
                ids.len(),
                self.max_len
            )));
        }
        let len = ids.len();
        ids.resize(self.max_len, PAD);
        Ok(PromptTemplate {
            ids,
            len,
            placeholder: slot,
        })
    }

    /// Readable form of a template.
    pub fn detokenize(&self, t: &PromptTemplate) -> String {
        t.ids[1..t.len - 1]
            .iter()
            .map(|&i| self.words[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
            .replace(" ,", ",")
    }
}

/// Lowercased word split with commas as standalone tokens.
pub fn split_words(text: &str) -> Vec<String> {
    text.replace(',', " , ")
        .split_whitespace()
        .map(str::to_lowercase)
        .collect()
}

/// Token ids of one prompt, framed with BOS/EOS and padded to the maximum length.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTemplate {
    ids: Vec<TokenId>,
    len: usize,
    placeholder: Option<usize>,
}

impl PromptTemplate {
    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Number of tokens before padding, BOS and EOS included.
    pub fn content_len(&self) -> usize {
        self.len
    }

    pub fn placeholder_slot(&self) -> Option<usize> {
        self.placeholder
    }

    pub fn has_placeholder(&self) -> bool {
        self.placeholder.is_some()
    }

    /// `true` for every non-PAD position.
    pub fn key_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i != PAD).collect()
    }
}
