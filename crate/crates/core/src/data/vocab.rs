use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_RESERVED: usize = 5;

const RESERVED: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercased word tokens; every non-alphanumeric, non-space character is
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
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

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

/// Builds a vocabulary from raw texts. Tokens seen fewer than `min_count`
/// times are left out; ids follow descending frequency, then lexicographic
/// order.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Vocab {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t), min_count)
        .expect("tokenizer never yields reserved or duplicate tokens")
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, min_count: usize) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self {
            tokens: all,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_RESERVED
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the min-count and the id-ordered token list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.min_count.to_string().as_bytes());
        for t in &self.tokens {
            h.update(b"\n");
            h.update(t.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// One non-reserved token per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("min_count={}\n", self.min_count);
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let min_count = lines
            .next()
            .and_then(|l| l.strip_prefix("min_count="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidConfig("vocabulary text lacks min_count header".into()))?;
        Self::from_tokens(lines.map(str::to_string), min_count)
    }
}
