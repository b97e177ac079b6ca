use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::normalized_tokens;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const MASK: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "<mask>"];

/// Word-level vocabulary over lowercased tokens. The four special tokens
/// always occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len() as u32);
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    /// Vocabulary of every token appearing in `texts`, in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(texts.into_iter().flat_map(normalized_tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        normalized_tokens(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Ids a model may predict: `<unk>` and every regular token.
    pub fn predictable_ids(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(UNK).chain(SPECIALS.len() as u32..self.tokens.len() as u32)
    }

    pub fn num_predictable(&self) -> usize {
        self.tokens.len() - SPECIALS.len() + 1
    }

    pub fn is_predictable(&self, id: u32) -> bool {
        id == UNK || id as usize >= SPECIALS.len()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let words = tokens
            .into_iter()
            .filter(|t| !SPECIALS.contains(&t.as_str()));
        Vocab::new(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
