//! Corpus entries and text encoders.

use std::collections::HashMap;

use crate::embedding::RawEmbedding;
use crate::error::{Error, Result};

/// One training or memory sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub text: String,
    /// Token ids under some vocabulary; empty until tokenized.
    pub tokens: Vec<u32>,
    /// Whitespace word count.
    pub length: usize,
}

impl CorpusEntry {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let length = text.split_whitespace().count();
        if length == 0 {
            return Err(Error::InvalidArgument("corpus entry text is empty".into()));
        }
        Ok(CorpusEntry { text, tokens: Vec::new(), length })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

/// Build entries from lines, skipping blank ones.
pub fn corpus_from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vec<CorpusEntry> {
    lines.into_iter().filter_map(|l| CorpusEntry::new(l.trim()).ok()).collect()
}

/// Maps text to an unnormalized embedding. Implementations must be
/// deterministic; the engine never trains them.
pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<RawEmbedding>;
}

impl<T: TextEncoder + ?Sized> TextEncoder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn encode(&self, text: &str) -> Result<RawEmbedding> {
        (**self).encode(text)
    }
}

/// Encoder backed by precomputed embeddings, e.g. from an exporter's JSONL.
#[derive(Debug, Clone, Default)]
pub struct LookupEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl LookupEncoder {
    pub fn new(dim: usize) -> Self {
        LookupEncoder { dim, table: HashMap::new() }
    }

    pub fn insert(&mut self, text: impl Into<String>, raw: Vec<f64>) -> Result<()> {
        crate::embedding::check_dim(self.dim, raw.len())?;
        self.table.insert(text.into(), raw);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TextEncoder for LookupEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<RawEmbedding> {
        self.table
            .get(text)
            .map(|v| RawEmbedding::new(v.clone()))
            .ok_or_else(|| Error::EncoderFailure(format!("no embedding for {text:?}")))
    }
}
