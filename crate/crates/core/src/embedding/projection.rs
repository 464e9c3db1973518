use rayon::prelude::*;

use super::kernels::{axpy_f32, dot_f32_f64, l2_norm, pairwise_sum};
use super::{check_dim, Embedding, ZERO_NORM};
use crate::error::{Error, Result};
use crate::memory::SupportMemory;

/// Default temperature for single-image queries.
pub const IMAGE_TEMPERATURE: f64 = 1.0 / 100.0;
/// Default temperature for pooled video queries.
pub const VIDEO_TEMPERATURE: f64 = 1.0 / 150.0;

/// Rows per block of the projection scan. Block boundaries are fixed, so the
/// reduction tree is the same whatever the thread count.
const BLOCK_ROWS: usize = 256;

/// Rows whose weight is below `exp(SKIP_LOG_WEIGHT)` times the block
/// maximum are left out of the weighted sum (still counted in the mass).
/// Even a million of them move the result by less than one f64 ulp.
const SKIP_LOG_WEIGHT: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    temperature: f64,
    /// Subtract the running maximum before exponentiating. Only disable this
    /// to compare against a naive evaluation; small temperatures overflow.
    pub stable_softmax: bool,
}

impl ProjectionConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(ProjectionConfig { temperature, stable_softmax: true })
    }

    pub fn image() -> Self {
        ProjectionConfig { temperature: IMAGE_TEMPERATURE, stable_softmax: true }
    }

    pub fn video() -> Self {
        ProjectionConfig { temperature: VIDEO_TEMPERATURE, stable_softmax: true }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn naive(mut self) -> Self {
        self.stable_softmax = false;
        self
    }
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::image()
    }
}

/// Output of [`project`].
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// `raw_combination / ‖raw_combination‖`, the decoder prefix.
    pub projected: Embedding,
    /// Softmax weight of every memory entry, in memory order.
    pub weights: Vec<f64>,
    /// `Σ wᵢ·mᵢ` before normalization.
    pub raw_combination: Vec<f64>,
}

/// Temperature softmax `wᵢ = exp(sᵢ/τ) / Σₖ exp(sₖ/τ)`.
pub fn softmax_weights(similarities: &[f64], config: &ProjectionConfig) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(Error::EmptyInput);
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    let inv_tau = 1.0 / config.temperature;
    let shift = if config.stable_softmax {
        similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let exps: Vec<f64> = similarities.iter().map(|s| ((s - shift) * inv_tau).exp()).collect();
    let total = pairwise_sum(&exps);
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite);
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}

struct Block {
    sims: Vec<f64>,
    shift: f64,
    mass: f64,
    acc: Vec<f64>,
}

/// One pass over a block: each row's similarity, exponential and weighted
/// row are folded in while the row is hot. When a new maximum appears the
/// running sums are rescaled to it.
fn scan_block(rows: &[f32], query: &[f64], inv_tau: f64, stable: bool) -> Block {
    let d = query.len();
    let n = rows.len() / d;
    let mut sims = Vec::with_capacity(n);
    let mut exps = Vec::with_capacity(n);
    let mut acc = vec![0.0; d];
    let mut shift = if stable { f64::NEG_INFINITY } else { 0.0 };
    let skip_below = if stable { SKIP_LOG_WEIGHT } else { f64::NEG_INFINITY };
    for row in rows.chunks_exact(d) {
        let s = dot_f32_f64(row, query);
        sims.push(s);
        if s > shift {
            let f = ((shift - s) * inv_tau).exp();
            acc.iter_mut().for_each(|a| *a *= f);
            exps.iter_mut().for_each(|e| *e *= f);
            shift = s;
        }
        let z = (s - shift) * inv_tau;
        let e = z.exp();
        exps.push(e);
        if e != 0.0 && z >= skip_below {
            axpy_f32(&mut acc, e, row);
        }
    }
    Block { sims, shift, mass: pairwise_sum(&exps), acc }
}

/// Pairwise merge of rescaled block partials in block order.
fn merge(parts: &mut [(f64, Vec<f64>)]) -> (f64, Vec<f64>) {
    if parts.len() == 1 {
        return std::mem::take(&mut parts[0]);
    }
    let mid = parts.len() / 2;
    let (left, right) = parts.split_at_mut(mid);
    let (lm, mut la) = merge(left);
    let (rm, ra) = merge(right);
    for (a, b) in la.iter_mut().zip(&ra) {
        *a += b;
    }
    (lm + rm, la)
}

/// Project `query` onto the span of the support memory:
/// `v_proj = Σᵢ softmax(mᵢᵀv / τ)ᵢ · mᵢ`.
///
/// Memory rows and the query are unit vectors, so `mᵢᵀv` is their cosine.
/// The similarity scan runs on the current rayon pool; block partials are
/// combined in a fixed tree so the result is bitwise identical for any
/// number of threads.
pub fn project(
    query: &Embedding,
    memory: &SupportMemory,
    config: &ProjectionConfig,
) -> Result<ProjectionResult> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    check_dim(memory.dim(), query.dim())?;
    let d = memory.dim();
    let q = query.as_slice();
    let inv_tau = 1.0 / config.temperature;
    let stable = config.stable_softmax;

    let blocks: Vec<Block> = memory
        .data()
        .par_chunks(BLOCK_ROWS * d)
        .map(|rows| scan_block(rows, q, inv_tau, stable))
        .collect();

    let global_shift = if stable {
        blocks.iter().map(|b| b.shift).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let mut scaled: Vec<(f64, Vec<f64>)> = blocks
        .iter()
        .map(|b| {
            let f = ((b.shift - global_shift) * inv_tau).exp();
            (b.mass * f, b.acc.iter().map(|a| a * f).collect())
        })
        .collect();
    let (mass, acc) = merge(&mut scaled);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::NonFinite);
    }

    let mut weights = Vec::with_capacity(memory.len());
    for b in &blocks {
        weights.extend(b.sims.iter().map(|s| ((s - global_shift) * inv_tau).exp() / mass));
    }
    let raw_combination: Vec<f64> = acc.into_iter().map(|a| a / mass).collect();
    let norm = l2_norm(&raw_combination);
    if norm < ZERO_NORM {
        return Err(Error::DegenerateCombination);
    }
    let projected = Embedding(raw_combination.iter().map(|x| x / norm).collect());
    Ok(ProjectionResult { projected, weights, raw_combination })
}
