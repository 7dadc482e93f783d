use std::collections::HashMap;

use super::Dataset;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token-to-id map. Ids 0 and 1 are reserved for padding and unknown words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn with_specials() -> Self {
        let tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        Self {
            tokens,
            index: HashMap::new(),
        }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::with_specials();
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of an already-lowercased token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps ids back to tokens, dropping padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .filter(|&&id| id != PAD)
            .filter_map(|&id| self.token(id))
            .collect()
    }
}

/// Builds a vocabulary from the training examples, keeping tokens seen at
/// least `min_freq` times. Ids follow first occurrence.
pub fn build_vocab(dataset: &Dataset, min_freq: usize) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(Error::config("min_freq must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order = Vec::new();
    for ex in &dataset.examples {
        for tok in tokenize(&ex.text) {
            let c = counts.entry(tok.clone()).or_insert(0);
            if *c == 0 {
                order.push(tok);
            }
            *c += 1;
        }
    }
    Ok(Vocab::from_tokens(
        order.into_iter().filter(|t| counts[t] >= min_freq),
    ))
}
