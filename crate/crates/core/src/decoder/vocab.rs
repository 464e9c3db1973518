use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::CorpusEntry;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Anything that maps a word to a token id.
pub trait Tokenizer {
    fn token_id(&self, word: &str) -> Option<u32>;

    /// Whitespace word-level tokenization over a closed vocabulary.
    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.token_id(w).ok_or_else(|| Error::UnknownToken(w.to_owned())))
            .collect()
    }
}

impl Tokenizer for HashMap<String, u32> {
    fn token_id(&self, word: &str) -> Option<u32> {
        self.get(word).copied()
    }
}

impl Tokenizer for BTreeMap<String, u32> {
    fn token_id(&self, word: &str) -> Option<u32> {
        self.get(word).copied()
    }
}

/// Closed word-level vocabulary. Ids are dense; `<pad>`, `<bos>` and `<eos>`
/// occupy ids 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Specials followed by the distinct words in sorted order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = words.into_iter().collect();
        let mut tokens = vec![PAD_TOKEN.to_owned(), BOS_TOKEN.to_owned(), EOS_TOKEN.to_owned()];
        tokens.extend(
            words
                .into_iter()
                .filter(|w| ![PAD_TOKEN, BOS_TOKEN, EOS_TOKEN].contains(w))
                .map(str::to_owned),
        );
        Self::from_tokens(tokens)
    }

    pub fn from_corpus(corpus: &[CorpusEntry]) -> Self {
        Self::from_words(corpus.iter().flat_map(|e| e.words()))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    /// Rebuild from `(token, id)` pairs, e.g. from a checkpoint.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, u32)>) -> Result<Self> {
        let mut by_id: BTreeMap<u32, String> = BTreeMap::new();
        for (tok, id) in pairs {
            if by_id.insert(id, tok).is_some() {
                return Err(Error::Malformed(format!("duplicate token id {id}")));
            }
        }
        if by_id.keys().next_back().map_or(0, |&i| i as usize + 1) != by_id.len() {
            return Err(Error::Malformed("token ids are not dense".into()));
        }
        let tokens: Vec<String> = by_id.into_values().collect();
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Malformed("duplicate token string".into()));
        }
        let specials = [(PAD_TOKEN, PAD), (BOS_TOKEN, BOS), (EOS_TOKEN, EOS)];
        if specials.iter().any(|(t, id)| vocab.index.get(*t) != Some(id)) {
            return Err(Error::Malformed("special tokens missing or misplaced".into()));
        }
        Ok(vocab)
    }

    /// `(token, id)` pairs sorted by token.
    pub fn sorted_pairs(&self) -> Vec<(&str, u32)> {
        let mut pairs: Vec<(&str, u32)> = self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        pairs.sort();
        pairs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id <= EOS
    }

    /// Join the words for `ids`, skipping special tokens.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Tokenizer for Vocab {
    fn token_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }
}
