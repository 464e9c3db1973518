//! Inference strategies: turn a query embedding into a decoder prefix or a
//! retrieved caption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{decode_greedy, DecoderModel, Tokenizer};
use crate::embedding::kernels::{argmax, l2_norm};
use crate::embedding::{check_dim, project, Embedding, ProjectionConfig, ZERO_NORM};
use crate::error::{Error, Result};
use crate::memory::SupportMemory;

/// Default number of frames pooled per video.
pub const DEFAULT_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Decode the softmax-weighted combination of memory embeddings.
    ProjectionDecoding(ProjectionConfig),
    /// Decode the single most similar memory embedding.
    NearestNeighborDecoding,
    /// Decode the query embedding itself.
    VisualDecoding,
    /// Return the most similar stored text, no decoder involved.
    Retrieval,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ProjectionDecoding(_) => "pd",
            Strategy::NearestNeighborDecoding => "nnd",
            Strategy::VisualDecoding => "vd",
            Strategy::Retrieval => "retrieve",
        }
    }
}

pub fn prefix_pd(query: &Embedding, memory: &SupportMemory, config: &ProjectionConfig) -> Result<Embedding> {
    Ok(project(query, memory, config)?.projected)
}

/// Nearest memory entry by cosine; lowest index wins ties.
pub fn prefix_nnd(query: &Embedding, memory: &SupportMemory) -> Result<(Embedding, usize)> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let sims = memory.similarities(query)?;
    let i = argmax(&sims).expect("memory is non-empty");
    Ok((memory.embedding(i), i))
}

pub fn prefix_vd(query: &Embedding) -> Embedding {
    query.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub index: usize,
    pub text: String,
    pub score: f64,
}

/// Top-`k` memory texts by cosine, descending; ties go to the lower index.
pub fn retrieve_cliprre(query: &Embedding, memory: &SupportMemory, k: usize) -> Result<Vec<Retrieved>> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if k == 0 || k > memory.len() {
        return Err(Error::KOutOfRange { k, n: memory.len() });
    }
    let sims = memory.similarities(query)?;
    Ok(top_k(&sims, k)
        .into_iter()
        .map(|i| Retrieved { index: i, text: memory.text(i).to_owned(), score: sims[i] })
        .collect())
}

/// Indices of the `k` largest scores, descending, lower index first on ties.
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, by_rank);
        idx.truncate(k);
    }
    idx.sort_by(by_rank);
    idx
}

/// Mean of `min(k, frames)` frames sampled without replacement, re-normalized.
pub fn pool_frames(frames: &[Embedding], k: usize, seed: u64) -> Result<Embedding> {
    let first = frames.first().ok_or(Error::EmptyInput)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let d = first.dim();
    for f in frames {
        check_dim(d, f.dim())?;
    }
    let take = k.min(frames.len());
    let mut picked = if take == frames.len() {
        (0..frames.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, frames.len(), take).into_vec()
    };
    // summation order independent of sampling order
    picked.sort_unstable();
    let mut mean = vec![0.0; d];
    for &i in &picked {
        for (m, x) in mean.iter_mut().zip(frames[i].as_slice()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= take as f64);
    if l2_norm(&mean) < ZERO_NORM {
        return Err(Error::DegenerateCombination);
    }
    Ok(Embedding::normalize(&mean)?.0)
}

/// Prompt text forced into the decoder right after the prefix embedding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSpec {
    pub prompt_text: String,
}

impl PromptSpec {
    pub fn new(text: impl Into<String>) -> Self {
        PromptSpec { prompt_text: text.into() }
    }
}

pub fn apply_prompt<T: Tokenizer + ?Sized>(spec: &PromptSpec, tokenizer: &T) -> Result<Vec<u32>> {
    tokenizer.tokenize(&spec.prompt_text)
}

/// A generated or retrieved caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub text: String,
    /// Decoded tokens (including forced prompt tokens); empty for retrieval.
    pub tokens: Vec<u32>,
}

/// Run one strategy end to end for a query.
pub fn caption(
    query: &Embedding,
    strategy: &Strategy,
    memory: &SupportMemory,
    model: &DecoderModel,
    prompt: &[u32],
) -> Result<Caption> {
    let prefix = match strategy {
        Strategy::ProjectionDecoding(cfg) => prefix_pd(query, memory, cfg)?,
        Strategy::NearestNeighborDecoding => prefix_nnd(query, memory)?.0,
        Strategy::VisualDecoding => prefix_vd(query),
        Strategy::Retrieval => {
            let best = retrieve_cliprre(query, memory, 1)?.remove(0);
            return Ok(Caption { text: best.text, tokens: Vec::new() });
        }
    };
    let tokens = decode_greedy(model, &prefix, prompt, model.config().max_len)?;
    Ok(Caption { text: model.vocab().detokenize(&tokens), tokens })
}

/// Caption every query with one strategy, in parallel, in query order.
pub fn caption_all(
    queries: &[Embedding],
    strategy: &Strategy,
    memory: &SupportMemory,
    model: &DecoderModel,
    prompt: &[u32],
) -> Result<Vec<Caption>> {
    use rayon::prelude::*;
    queries.par_iter().map(|q| caption(q, strategy, memory, model, prompt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalize(v).unwrap().0
    }

    fn memory(rows: &[&[f64]]) -> SupportMemory {
        let mut m = SupportMemory::new(rows[0].len());
        for (i, r) in rows.iter().enumerate() {
            m.push(&unit(r), 1.0, format!("t{i}")).unwrap();
        }
        m
    }

    #[test]
    fn pd_singleton() {
        let m = memory(&[&[0.0, 3.0, 4.0]]);
        let p = prefix_pd(&unit(&[1.0, 0.0, 0.0]), &m, &ProjectionConfig::image()).unwrap();
        assert!((p.as_slice()[1] - 0.6).abs() < 1e-7);
        assert!((p.as_slice()[2] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn nnd_exact_and_ties() {
        let m = memory(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let (e, i) = prefix_nnd(&unit(&[0.0, 1.0]), &m).unwrap();
        assert_eq!(i, 1);
        assert_eq!(e, m.embedding(1));
        let (_, i) = prefix_nnd(&unit(&[1.0, 1.0]), &m).unwrap();
        assert_eq!(i, 0);
        assert!(matches!(prefix_nnd(&unit(&[1.0]), &SupportMemory::new(1)), Err(Error::EmptyMemory)));
    }

    #[test]
    fn vd_is_identity() {
        let q = unit(&[0.2, 0.9]);
        assert_eq!(prefix_vd(&q), q);
    }

    #[test]
    fn retrieval_order_and_bounds() {
        let m = memory(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0], &[0.6, 0.8]]);
        let all = retrieve_cliprre(&unit(&[0.0, 1.0]), &m, 4).unwrap();
        let idx: Vec<usize> = all.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![2, 1, 3, 0]);
        assert_eq!(all[0].text, "t2");
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(matches!(retrieve_cliprre(&unit(&[0.0, 1.0]), &m, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(retrieve_cliprre(&unit(&[0.0, 1.0]), &m, 5), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn pooling_cases() {
        let f = unit(&[0.3, 0.4, 0.5]);
        let close = |a: &Embedding, b: &Embedding| a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&pool_frames(&[f.clone(), f.clone(), f.clone()], 10, 1).unwrap(), &f));
        assert!(close(&pool_frames(&[f.clone()], 10, 1).unwrap(), &f));
        let a = unit(&[1.0, 0.0, 0.0]);
        let b = unit(&[0.0, 1.0, 0.0]);
        let p = pool_frames(&[a, b], 2, 0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.as_slice()[0] - s).abs() < 1e-15);
        assert!((p.as_slice()[1] - s).abs() < 1e-15);
        assert_eq!(p.as_slice()[2], 0.0);
    }

    #[test]
    fn pooling_errors() {
        assert!(matches!(pool_frames(&[], 10, 0), Err(Error::EmptyInput)));
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[-1.0, 0.0]);
        assert!(matches!(pool_frames(&[a.clone(), b], 2, 0), Err(Error::DegenerateCombination)));
        assert!(pool_frames(&[a.clone()], 0, 0).is_err());
        assert!(pool_frames(&[a, unit(&[1.0, 0.0, 0.0])], 2, 0).is_err());
    }

    #[test]
    fn pooling_samples_deterministically() {
        let frames: Vec<Embedding> = (0..30).map(|i| unit(&[1.0, i as f64, (i * i) as f64 * 0.1])).collect();
        let a = pool_frames(&frames, 10, 42).unwrap();
        let b = pool_frames(&frames, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = pool_frames(&frames, 10, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prompts() {
        let toy: HashMap<String, u32> = [("there".to_owned(), 5), ("is".to_owned(), 7)].into();
        assert!(apply_prompt(&PromptSpec::default(), &toy).unwrap().is_empty());
        assert_eq!(apply_prompt(&PromptSpec::new("there is"), &toy).unwrap(), vec![5, 7]);
        assert!(matches!(apply_prompt(&PromptSpec::new("there are"), &toy), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn top_k_partial_matches_full_sort() {
        let scores: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 * 0.01).sin()).collect();
        let full = top_k(&scores, scores.len());
        for k in [1, 5, 50, 199] {
            assert_eq!(top_k(&scores, k), full[..k]);
        }
    }
}
