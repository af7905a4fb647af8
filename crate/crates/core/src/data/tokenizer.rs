use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["[PAD]", "[UNK]", "[MASK]"];

/// Lowercased word tokens: runs of alphanumerics and apostrophes form words,
/// every other non-space character is its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word-level vocabulary with a fixed cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    words: Vec<String>,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Self::from_words(r.words)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr { words: t.words }
    }
}

impl Tokenizer {
    fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// Keeps the specials, then every forced word, then the most frequent
    /// corpus words (ties broken alphabetically) until `cap` ids exist.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        cap: usize,
        forced: &[String],
    ) -> Result<Self, DataError> {
        let mut words: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for w in forced {
            let pieces = split_words(w);
            if pieces.len() != 1 || pieces[0] != *w {
                return Err(DataError::NotASingleToken(w.clone()));
            }
            if !words.contains(w) {
                words.push(w.clone());
            }
        }
        if cap <= words.len() {
            return Err(DataError::CapTooSmall {
                cap,
                required: words.len() + 1,
            });
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !words.contains(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = cap - words.len();
        words.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Ok(Self::from_words(words))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK_ID)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.word(i).unwrap_or("[UNK]")).collect()
    }
}
