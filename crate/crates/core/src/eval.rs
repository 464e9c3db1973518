//! Caption metrics and pipeline timing.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::time::Instant;

use serde::Serialize;

use crate::decoder::{decode_greedy, DecoderModel};
use crate::embedding::{project, Embedding, ProjectionConfig};
use crate::error::{Error, Result};
use crate::memory::{random_memory, SupportMemory};
use crate::strategies::top_k;
use crate::toy::{GapSpec, ToyImageEncoder, ToyWorld};

/// Fraction of positions where hypothesis and reference are identical.
pub fn exact_match_rate<T: PartialEq>(hypotheses: &[T], references: &[T]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch { left: hypotheses.len(), right: references.len() });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(hits as f64 / hypotheses.len() as f64)
}

fn ngram_counts<T: Eq + Hash>(words: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram statistics of one hypothesis against its references.
#[derive(Debug, Clone, PartialEq, Eq)]
struct NgramStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

impl NgramStats {
    fn new<T: Eq + Hash, R: AsRef<[T]>>(hyp: &[T], refs: &[R], max_n: usize) -> Self {
        let mut matches = vec![0; max_n];
        let mut totals = vec![0; max_n];
        for n in 1..=max_n {
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            matches[n - 1] = ngram_counts(hyp, n)
                .iter()
                .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            totals[n - 1] = hyp.len().saturating_sub(n - 1);
        }
        // closest reference length, shorter wins ties
        let ref_len = refs
            .iter()
            .map(|r| r.as_ref().len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        NgramStats { matches, totals, hyp_len: hyp.len(), ref_len }
    }

    fn add(&mut self, other: &NgramStats) {
        self.matches.iter_mut().zip(&other.matches).for_each(|(a, b)| *a += b);
        self.totals.iter_mut().zip(&other.totals).for_each(|(a, b)| *a += b);
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let n = self.matches.len() as f64;
        let log_p = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / n;
        let log_bp = if self.hyp_len >= self.ref_len { 0.0 } else { 1.0 - self.ref_len as f64 / self.hyp_len as f64 };
        (log_p + log_bp).exp()
    }
}

/// BLEU of one hypothesis: uniform weights over orders `1..=max_n`, clipped
/// counts, closest-reference brevity penalty, no smoothing.
pub fn bleu<T: Eq + Hash, R: AsRef<[T]>>(hypothesis: &[T], references: &[R], max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    if hypothesis.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    if references.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(NgramStats::new(hypothesis, references, max_n).score())
}

/// Corpus BLEU: counts and lengths are summed over sentences before combining.
pub fn corpus_bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(
    hypotheses: &[H],
    references: &[Vec<R>],
    max_n: usize,
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch { left: hypotheses.len(), right: references.len() });
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    let mut total: Option<NgramStats> = None;
    for (h, rs) in hypotheses.iter().zip(references) {
        if rs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let s = NgramStats::new(h.as_ref(), rs, max_n);
        match total.as_mut() {
            Some(t) => t.add(&s),
            None => total = Some(s),
        }
    }
    let total = total.ok_or(Error::EmptyInput)?;
    if total.hyp_len == 0 {
        return Err(Error::EmptyHypothesis);
    }
    Ok(total.score())
}

/// Whitespace tokens, for scoring plain-text captions.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Fraction of queries whose gold memory index is among the `k` most
/// similar entries (ties to the lower index).
pub fn recall_at_k(memory: &SupportMemory, queries: &[(Embedding, usize)], k: usize) -> Result<f64> {
    if k == 0 || k > memory.len() {
        return Err(Error::KOutOfRange { k, n: memory.len() });
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0;
    for (q, gold) in queries {
        if *gold >= memory.len() {
            return Err(Error::InvalidArgument(format!("gold index {gold} outside memory of {}", memory.len())));
        }
        if top_k(&memory.similarities(q)?, k).contains(gold) {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Per-stage wall clock of one query through the pipeline, in milliseconds
/// (median over trials).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub memory_size: usize,
    pub dim: usize,
    pub threads: usize,
    pub trials: usize,
    pub encode_ms: f64,
    pub project_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
}

impl TimingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    /// Stage table: one row per stage plus the total.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<44} {:>12}\n",
            format!("Stage ({} x {}, {} threads)", self.memory_size, self.dim, self.threads),
            "Time (ms)"
        );
        for (stage, ms) in [
            ("Query encoding", self.encode_ms),
            ("Embedding projection", self.project_ms),
            ("Greedy decoding", self.decode_ms),
            ("Total", self.total_ms),
        ] {
            out.push_str(&format!("{stage:<44} {ms:>12.3}\n"));
        }
        out
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "memory_size={} dim={} threads={} trials={} encode_ms={:.3} project_ms={:.3} decode_ms={:.3} total_ms={:.3}",
            self.memory_size,
            self.dim,
            self.threads,
            self.trials,
            self.encode_ms,
            self.project_ms,
            self.decode_ms,
            self.total_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub memory_sizes: Vec<usize>,
    pub dim: usize,
    pub trials: usize,
    /// Worker threads for the run; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
    pub seed: u64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = f()?;
    Ok((start.elapsed().as_secs_f64() * 1e3, out))
}

/// Time encode (toy image encoder), project and greedy decode for one query
/// against random memories of each size. One warm-up run precedes the
/// `trials` timed runs; stage times are medians.
pub fn benchmark_pipeline(config: &BenchConfig, decoder: &DecoderModel) -> Result<Vec<TimingReport>> {
    if config.trials == 0 || config.memory_sizes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.memory_sizes.contains(&0) {
        return Err(Error::EmptyMemory);
    }
    if decoder.config().embed_dim != config.dim {
        return Err(Error::DimensionMismatch { expected: config.dim, got: decoder.config().embed_dim });
    }
    let run = || -> Result<Vec<TimingReport>> {
        let world = ToyWorld::standard(config.dim, config.seed);
        let captions = world.captions();
        let images = ToyImageEncoder::new(world, GapSpec::new(0.5, 0.3, 0.05, config.seed)?);
        let proj = ProjectionConfig::image();
        let mut reports = Vec::with_capacity(config.memory_sizes.len());
        for &n in &config.memory_sizes {
            let memory = random_memory(n, config.dim, config.seed)?;
            let (mut enc, mut pro, mut dec, mut tot) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for t in 0..=config.trials {
                let caption = &captions[t % captions.len()];
                let start = Instant::now();
                let (e, query) = time_ms(|| images.encode(caption, t as u64))?;
                let (p, prefix) = time_ms(|| Ok(project(&query, &memory, &proj)?.projected))?;
                let (d, tokens) = time_ms(|| decode_greedy(decoder, &prefix, &[], decoder.config().max_len))?;
                let total = start.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(tokens);
                if t > 0 {
                    enc.push(e);
                    pro.push(p);
                    dec.push(d);
                    tot.push(total);
                }
            }
            reports.push(TimingReport {
                memory_size: n,
                dim: config.dim,
                threads: rayon::current_num_threads(),
                trials: config.trials,
                encode_ms: median(enc),
                project_ms: median(pro),
                decode_ms: median(dec),
                total_ms: median(tot),
            });
        }
        Ok(reports)
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Median wall time of `project` alone over `trials` runs after one
/// warm-up, cycling through `queries`, on the ambient rayon pool.
pub fn time_projection(
    memory: &SupportMemory,
    queries: &[Embedding],
    config: &ProjectionConfig,
    trials: usize,
) -> Result<f64> {
    if queries.is_empty() || trials == 0 {
        return Err(Error::EmptyInput);
    }
    project(&queries[0], memory, config)?;
    let mut times = Vec::with_capacity(trials);
    for t in 0..trials {
        let (ms, r) = time_ms(|| project(&queries[t % queries.len()], memory, config))?;
        std::hint::black_box(r);
        times.push(ms);
    }
    Ok(median(times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;

    #[test]
    fn exact_match() {
        let a = vec![vec![1, 2], vec![3]];
        assert_eq!(exact_match_rate(&a, &a).unwrap(), 1.0);
        assert_eq!(exact_match_rate(&a, &[vec![1, 2], vec![4]]).unwrap(), 0.5);
        assert_eq!(exact_match_rate(&a, &[vec![9], vec![9]]).unwrap(), 0.0);
        assert!(matches!(exact_match_rate(&a, &a[..1]), Err(Error::LengthMismatch { .. })));
        assert!(exact_match_rate::<u32>(&[], &[]).is_err());
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        assert_eq!(bleu(&words("a red metal cube"), &[words("a red metal cube")], 4).unwrap(), 1.0);
        assert_eq!(bleu(&words("x y z w"), &[words("a b c d")], 4).unwrap(), 0.0);
        assert!(matches!(bleu::<&str, Vec<&str>>(&[], &[words("a")], 4), Err(Error::EmptyHypothesis)));
        assert!(bleu(&words("a"), &[words("a")], 0).is_err());
    }

    #[test]
    fn bleu_two_gram_worked_case() {
        // p1 = 3/4, p2 = 2/3, equal lengths
        let expected = (0.75f64 * 2.0 / 3.0).sqrt();
        assert!((bleu(&words("a b c d"), &[words("a b c e")], 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_clipping_and_brevity() {
        assert!((bleu(&words("the the the"), &[words("the cat")], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((bleu(&words("a b"), &[words("a b c d")], 1).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(bleu(&words("a b"), &[words("a b c d"), words("a b")], 2).unwrap(), 1.0);
    }

    #[test]
    fn corpus_bleu_sums_counts() {
        let h = [words("a b c d"), words("a b c d")];
        let r = vec![vec![words("a b c e")], vec![words("a b c e")]];
        let expected = (0.75f64 * 2.0 / 3.0).sqrt();
        assert!((corpus_bleu(&h, &r, 2).unwrap() - expected).abs() < 1e-12);
    }

    fn memory() -> SupportMemory {
        let mut m = SupportMemory::new(2);
        for (i, v) in [[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]].iter().enumerate() {
            m.push(&Embedding::normalize(v).unwrap().0, 1.0, format!("t{i}")).unwrap();
        }
        m
    }

    #[test]
    fn recall_cases() {
        let m = memory();
        let own: Vec<(Embedding, usize)> = (0..3).map(|i| (m.embedding(i), i)).collect();
        assert_eq!(recall_at_k(&m, &own, 1).unwrap(), 1.0);
        let shifted = vec![(m.embedding(0), 1), (m.embedding(2), 1)];
        assert_eq!(recall_at_k(&m, &shifted, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&m, &shifted, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&m, &shifted, 3).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&m, &own, 4), Err(Error::KOutOfRange { .. })));
        assert!(matches!(recall_at_k(&m, &own, 0), Err(Error::KOutOfRange { .. })));
        assert!(recall_at_k(&m, &[(m.embedding(0), 7)], 1).is_err());
    }

    #[test]
    fn pipeline_report() {
        let world = ToyWorld::standard(8, 0);
        let mut cfg = DecoderConfig::toy(8);
        cfg.width = 8;
        cfg.ffn_dim = 8;
        cfg.max_len = 4;
        let model = DecoderModel::new(cfg, world.vocab(), 0).unwrap();
        let bench = BenchConfig { memory_sizes: vec![1, 64], dim: 8, trials: 3, threads: Some(1), seed: 2 };
        let reports = benchmark_pipeline(&bench, &model).unwrap();
        assert_eq!(reports.len(), 2);
        let r = &reports[1];
        assert_eq!((r.memory_size, r.dim, r.threads, r.trials), (64, 8, 1, 3));
        assert!(r.to_string().starts_with("memory_size=64 dim=8 threads=1 trials=3 encode_ms="));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["trials"], 3);
        assert!(r.table().contains("Embedding projection"));
        let bad = BenchConfig { dim: 9, ..bench.clone() };
        assert!(benchmark_pipeline(&bad, &model).is_err());
        assert!(benchmark_pipeline(&BenchConfig { memory_sizes: vec![0], ..bench }, &model).is_err());
    }

    #[test]
    fn random_memory_is_deterministic_and_unit() {
        let a = random_memory(5000, 16, 3).unwrap();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| random_memory(5000, 16, 3).unwrap());
        assert_eq!(a, b);
        assert_ne!(a.row(0), a.row(4096));
    }
}
