use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::news::NewsTable;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: usize = 2;

/// Token ↔ id map. Ids 0 and 1 are reserved for PAD and UNK; the rest are
/// contiguous from 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i + RESERVED).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Total id range including the reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD => Some("[PAD]"),
            UNK => Some("[UNK]"),
            _ => self.tokens.get(id - RESERVED).map(String::as_str),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 of the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line; line `i` (0-based) holds id `i + 2`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Keeps tokens seen at least `min_count` times, ordered by count descending
/// then token ascending.
pub fn build_vocab(news: &NewsTable, min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in news.records() {
        for t in &r.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect()).expect("counted tokens are unique")
}
