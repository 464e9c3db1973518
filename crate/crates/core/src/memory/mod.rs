//! The support memory: the stored text embeddings that stand in for the text
//! embedding space at inference time.
//!
//! Rows are kept as one contiguous row-major `f32` matrix alongside the
//! pre-normalization norm and source text of each entry.

mod format;
mod jsonl;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use format::{load_memory, load_memory_with_dim, read_memory, save_memory, write_memory};
pub use jsonl::{
    memory_from_jsonl, read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, JsonlRecord,
};

use crate::corpus::{CorpusEntry, TextEncoder};
use crate::embedding::kernels::dot_f32;
use crate::embedding::{check_dim, Embedding, UNIT_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMemory {
    dim: usize,
    data: Vec<f32>,
    prenorms: Vec<f32>,
    texts: Vec<String>,
}

impl SupportMemory {
    pub fn new(dim: usize) -> Self {
        SupportMemory { dim, data: Vec::new(), prenorms: Vec::new(), texts: Vec::new() }
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Self {
        SupportMemory {
            dim,
            data: Vec::with_capacity(dim * capacity),
            prenorms: Vec::with_capacity(capacity),
            texts: Vec::with_capacity(capacity),
        }
    }

    /// Assemble a memory from its columns, checking that every row is a
    /// finite unit vector of length `dim`.
    pub fn from_raw_parts(
        dim: usize,
        data: Vec<f32>,
        prenorms: Vec<f32>,
        texts: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("memory dimension must be positive".into()));
        }
        let count = texts.len();
        if data.len() != count * dim {
            return Err(Error::DimensionMismatch { expected: count * dim, got: data.len() });
        }
        if prenorms.len() != count {
            return Err(Error::LengthMismatch { left: prenorms.len(), right: count });
        }
        let bad = data.par_chunks(dim).position_first(|row| {
            row.iter().any(|x| !x.is_finite()) || (dot_f32(row, row).sqrt() - 1.0).abs() > UNIT_TOLERANCE
        });
        if let Some(i) = bad {
            return Err(Error::Malformed(format!("row {i} is not a finite unit vector")));
        }
        if let Some(p) = prenorms.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Malformed(format!("invalid prenorm {p}")));
        }
        Ok(SupportMemory { dim, data, prenorms, texts })
    }

    pub fn push(&mut self, embedding: &Embedding, prenorm: f64, text: impl Into<String>) -> Result<()> {
        check_dim(self.dim, embedding.dim())?;
        self.data.extend(embedding.as_slice().iter().map(|&x| x as f32));
        self.prenorms.push(prenorm as f32);
        self.texts.push(text.into());
        Ok(())
    }

    fn push_row(&mut self, row: &[f32], prenorm: f32, text: &str) {
        self.data.extend_from_slice(row);
        self.prenorms.push(prenorm);
        self.texts.push(text.to_owned());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Row-major `len × dim` matrix of stored embeddings.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Row `i` widened to f64 and re-normalized.
    pub fn embedding(&self, i: usize) -> Embedding {
        let row: Vec<f64> = self.row(i).iter().map(|&x| f64::from(x)).collect();
        Embedding::normalize(&row).expect("memory rows are unit vectors").0
    }

    pub fn prenorm(&self, i: usize) -> f32 {
        self.prenorms[i]
    }

    pub fn prenorms(&self) -> &[f32] {
        &self.prenorms
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    /// New memory holding the given entries, in the given order.
    pub fn select(&self, indices: &[usize]) -> SupportMemory {
        let mut out = SupportMemory::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.push_row(self.row(i), self.prenorms[i], &self.texts[i]);
        }
        out
    }

    /// Append all entries of `other`.
    pub fn extend_from(&mut self, other: &SupportMemory) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        self.data.extend_from_slice(&other.data);
        self.prenorms.extend_from_slice(&other.prenorms);
        self.texts.extend(other.texts.iter().cloned());
        Ok(())
    }

    /// Similarity of every stored row to `query`, clamped to [-1, 1].
    pub fn similarities(&self, query: &Embedding) -> Result<Vec<f64>> {
        check_dim(self.dim, query.dim())?;
        let q = query.as_slice();
        Ok(self
            .data
            .par_chunks(self.dim * 1024)
            .flat_map_iter(|block| {
                block
                    .chunks_exact(self.dim)
                    .map(|row| crate::embedding::kernels::dot_f32_f64(row, q).clamp(-1.0, 1.0))
                    .collect::<Vec<_>>()
            })
            .collect())
    }
}

/// Rows drawn uniformly from the unit sphere, texts `"m{i}"`, prenorm 1.
/// Deterministic for a given seed whatever the thread count.
pub fn random_memory(count: usize, dim: usize, seed: u64) -> Result<SupportMemory> {
    use rand_distr::{Distribution, StandardNormal};
    const CHUNK: usize = 4096;
    if dim == 0 {
        return Err(Error::InvalidArgument("memory dimension must be positive".into()));
    }
    let mut data = vec![0f32; count * dim];
    data.par_chunks_mut(CHUNK * dim).enumerate().for_each(|(c, block)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut row = vec![0f64; dim];
        for out in block.chunks_exact_mut(dim) {
            let norm = loop {
                row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
                let n = crate::embedding::kernels::l2_norm(&row);
                if n > 1e-6 {
                    break n;
                }
            };
            out.iter_mut().zip(&row).for_each(|(o, x)| *o = (x / norm) as f32);
        }
    });
    let texts = (0..count).map(|i| format!("m{i}")).collect();
    SupportMemory::from_raw_parts(dim, data, vec![1.0; count], texts)
}

/// Encode every corpus sentence, in corpus order. Duplicates are kept.
pub fn build_memory<E: TextEncoder + ?Sized>(corpus: &[CorpusEntry], encoder: &E) -> Result<SupportMemory> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let encoded: Vec<(Embedding, f64)> = corpus
        .par_iter()
        .map(|entry| {
            let raw = encoder.encode(&entry.text)?;
            check_dim(encoder.dim(), raw.dim())?;
            Embedding::normalize(&raw.values)
        })
        .collect::<Result<_>>()?;
    let mut memory = SupportMemory::with_capacity(encoder.dim(), corpus.len());
    for (entry, (embedding, prenorm)) in corpus.iter().zip(encoded) {
        memory.push(&embedding, prenorm, entry.text.clone())?;
    }
    Ok(memory)
}

/// Keep sentences with fewer than `max_len` words whose encoder output has a
/// pre-normalization norm below `max_prenorm`. Order is preserved.
pub fn filter_by_norm_and_length<E: TextEncoder + ?Sized>(
    corpus: &[CorpusEntry],
    encoder: &E,
    max_len: usize,
    max_prenorm: f64,
) -> Result<Vec<CorpusEntry>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    if !(max_prenorm > 0.0) {
        return Err(Error::InvalidArgument("max_prenorm must be positive".into()));
    }
    let keep: Vec<bool> = corpus
        .par_iter()
        .map(|entry| {
            if entry.length >= max_len {
                return Ok(false);
            }
            Ok(encoder.encode(&entry.text)?.prenorm < max_prenorm)
        })
        .collect::<Result<_>>()?;
    Ok(corpus.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e.clone()).collect())
}

/// Outcome of [`compact_by_similarity`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub input_count: usize,
    pub retained_count: usize,
    pub threshold: f64,
    /// Input indices that were kept, ascending.
    pub retained: Vec<usize>,
    /// Removed input index → retained input index with cosine above threshold.
    pub removed_cover: BTreeMap<usize, usize>,
}

/// Retained rows above which the witness search goes parallel.
const PARALLEL_SCAN: usize = 2048;

/// Greedy single-pass similarity filter in entry order: an entry is kept iff
/// its cosine to every already-kept entry is at most `threshold`.
pub fn compact_by_similarity(memory: &SupportMemory, threshold: f64) -> Result<(SupportMemory, FilterReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1], got {threshold}")));
    }
    let d = memory.dim();
    let mut kept = SupportMemory::with_capacity(d, memory.len().min(1 << 16));
    let mut retained = Vec::new();
    let mut removed_cover = BTreeMap::new();
    let covers = |row: &[f32], other: &[f32]| dot_f32(row, other).clamp(-1.0, 1.0) > threshold;

    for i in 0..memory.len() {
        let row = memory.row(i);
        let witness = if retained.len() >= PARALLEL_SCAN {
            kept.data.par_chunks(d).position_first(|other| covers(row, other))
        } else {
            kept.data.chunks_exact(d).position(|other| covers(row, other))
        };
        match witness {
            Some(j) => {
                removed_cover.insert(i, retained[j]);
            }
            None => {
                retained.push(i);
                kept.push_row(row, memory.prenorms[i], &memory.texts[i]);
            }
        }
    }
    let report = FilterReport {
        input_count: memory.len(),
        retained_count: retained.len(),
        threshold,
        retained,
        removed_cover,
    };
    Ok((kept, report))
}

/// Entries kept by `ceil(fraction · N)`, accounting for float noise in the product.
fn sample_size(fraction: f64, n: usize) -> usize {
    let k = (fraction * n as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).clamp(n.min(1), n)
}

/// Uniform sample without replacement of `ceil(fraction · N)` entries,
/// returned in memory order. Deterministic for a fixed seed.
pub fn sample_memory(memory: &SupportMemory, fraction: f64, seed: u64) -> Result<SupportMemory> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let n = memory.len();
    let k = sample_size(fraction, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(memory.select(&picked))
}

/// Drop entries whose stored prenorm is not below `max_prenorm`.
pub fn filter_memory_by_prenorm(memory: &SupportMemory, max_prenorm: f64) -> SupportMemory {
    let keep: Vec<usize> = (0..memory.len())
        .filter(|&i| f64::from(memory.prenorms[i]) < max_prenorm)
        .collect();
    memory.select(&keep)
}
