//! Prefix-conditioned causal transformer with a hand-written backward pass.
//!
//! Sequence layout for a sentence `w₁ … w_L`:
//!
//! ```text
//! position  0        1      2    …  L+1
//! input     prefix   <bos>  w₁   …  w_L
//! target    -        w₁     w₂   …  <eos>
//! ```
//!
//! The prefix slot holds a learned linear projection of the conditioning
//! embedding. Blocks are pre-LayerNorm with GELU MLPs; all arithmetic is `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vocab::{Vocab, BOS, EOS};
use crate::embedding::check_dim;
use crate::embedding::kernels::dot_f64;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Dimension of the conditioning embedding.
    pub embed_dim: usize,
    /// Model width.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Longest sentence (in tokens, excluding `<eos>`) the model handles;
    /// also the greedy generation cap.
    pub max_len: usize,
    /// Std of the normal initializer for weight matrices and embeddings.
    pub init_std: f64,
    /// Std of the normal initializer for the prefix projection.
    pub prefix_init_std: f64,
}

impl DecoderConfig {
    /// 2 layers, 2 heads, width 64: trains on a laptop CPU in seconds.
    pub fn toy(embed_dim: usize) -> Self {
        DecoderConfig {
            embed_dim,
            width: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 256,
            max_len: 32,
            init_std: 0.02,
            prefix_init_std: 0.02,
        }
    }

    /// 4 layers, 4 heads, width 768, fed from 512-d embeddings.
    pub fn reference() -> Self {
        DecoderConfig {
            embed_dim: 512,
            width: 768,
            layers: 4,
            heads: 4,
            ffn_dim: 3072,
            max_len: 32,
            init_std: 0.02,
            prefix_init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("width", self.width),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    /// Prefix, `<bos>` and up to `max_len` tokens.
    pub fn positions(&self) -> usize {
        self.max_len + 2
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockOffsets {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    out_w: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc_w: usize,
    fc_b: usize,
    proj_w: usize,
    proj_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    specs: Vec<TensorSpec>,
    prefix_w: usize,
    prefix_b: usize,
    tok: usize,
    pos: usize,
    blocks: Vec<BlockOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &DecoderConfig, vocab: usize) -> Self {
        let mut specs: Vec<TensorSpec> = Vec::new();
        let mut total = 0;
        let mut add = |name: String, dims: Vec<usize>| {
            let spec = TensorSpec { name, dims, offset: total };
            total += spec.len();
            let off = spec.offset;
            specs.push(spec);
            off
        };
        let (w, f) = (cfg.width, cfg.ffn_dim);
        let prefix_w = add("prefix.weight".into(), vec![w, cfg.embed_dim]);
        let prefix_b = add("prefix.bias".into(), vec![w]);
        let tok = add("tok_emb".into(), vec![vocab, w]);
        let pos = add("pos_emb".into(), vec![cfg.positions(), w]);
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("layers.{l}");
                BlockOffsets {
                    ln1_g: add(format!("{p}.ln1.gain"), vec![w]),
                    ln1_b: add(format!("{p}.ln1.bias"), vec![w]),
                    qkv_w: add(format!("{p}.attn.qkv.weight"), vec![3 * w, w]),
                    qkv_b: add(format!("{p}.attn.qkv.bias"), vec![3 * w]),
                    out_w: add(format!("{p}.attn.out.weight"), vec![w, w]),
                    out_b: add(format!("{p}.attn.out.bias"), vec![w]),
                    ln2_g: add(format!("{p}.ln2.gain"), vec![w]),
                    ln2_b: add(format!("{p}.ln2.bias"), vec![w]),
                    fc_w: add(format!("{p}.mlp.fc.weight"), vec![f, w]),
                    fc_b: add(format!("{p}.mlp.fc.bias"), vec![f]),
                    proj_w: add(format!("{p}.mlp.proj.weight"), vec![w, f]),
                    proj_b: add(format!("{p}.mlp.proj.bias"), vec![w]),
                }
            })
            .collect();
        let lnf_g = add("ln_f.gain".into(), vec![w]);
        let lnf_b = add("ln_f.bias".into(), vec![w]);
        let head_w = add("head.weight".into(), vec![vocab, w]);
        let head_b = add("head.bias".into(), vec![vocab]);
        Layout { specs, prefix_w, prefix_b, tok, pos, blocks, lnf_g, lnf_b, head_w, head_b, total }
    }
}

/// Trainable prefix-conditioned decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    config: DecoderConfig,
    vocab: Vocab,
    layout: Layout,
    params: Vec<f64>,
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct BlockCache {
    ln1: LnCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    ln2: LnCache,
    m: Vec<f64>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
}

struct Cache {
    t: usize,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    logits: Vec<f64>,
}

impl DecoderModel {
    /// Randomly initialized model; deterministic for a fixed seed.
    pub fn new(config: DecoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab.len());
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |std: f64| Normal::new(0.0, std).expect("finite std");
        let std = normal(config.init_std);
        // residual projections scaled down with depth
        let resid = normal(config.init_std / (2.0 * config.layers as f64).sqrt());
        let prefix = normal(config.prefix_init_std);
        for spec in &layout.specs {
            let slice = &mut params[spec.range()];
            let n = &spec.name;
            if n.ends_with(".gain") {
                slice.fill(1.0);
            } else if n.ends_with(".bias") {
                slice.fill(0.0);
            } else {
                let dist = if n == "prefix.weight" {
                    &prefix
                } else if n.ends_with("attn.out.weight") || n.ends_with("mlp.proj.weight") {
                    &resid
                } else {
                    &std
                };
                slice.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
            }
        }
        Ok(DecoderModel { config, vocab, layout, params })
    }

    /// Assemble from named tensors; every expected tensor must be present
    /// with the expected shape.
    pub fn from_tensors(
        config: DecoderConfig,
        vocab: Vocab,
        tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab.len());
        if tensors.len() != layout.specs.len() {
            return Err(Error::Malformed(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        let mut params = vec![0.0; layout.total];
        let mut seen = vec![false; layout.specs.len()];
        for (name, dims, data) in tensors {
            let idx = layout
                .specs
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| Error::Malformed(format!("unexpected tensor {name:?}")))?;
            let spec = &layout.specs[idx];
            if spec.dims != dims || data.len() != spec.len() {
                return Err(Error::Malformed(format!(
                    "tensor {name:?} has shape {dims:?}, expected {:?}",
                    spec.dims
                )));
            }
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::Malformed(format!("tensor {name:?} repeated")));
            }
            params[spec.range()].copy_from_slice(&data);
        }
        Ok(DecoderModel { config, vocab, layout, params })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.specs.iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Round every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|p| *p = f64::from(*p as f32));
    }

    fn check_prefix(&self, prefix: &[f64]) -> Result<()> {
        check_dim(self.config.embed_dim, prefix.len())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        if tokens.len() > self.config.max_len {
            return Err(Error::SequenceTooLong { len: tokens.len(), max_len: self.config.max_len });
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        Ok(())
    }

    fn forward(&self, prefix: &[f64], inputs: &[u32]) -> Cache {
        let cfg = &self.config;
        let (w, f, h, v) = (cfg.width, cfg.ffn_dim, cfg.heads, self.vocab.len());
        let t = inputs.len() + 1;
        debug_assert!(t <= cfg.positions());
        let p = &self.params;
        let lay = &self.layout;

        let mut x = vec![0.0; t * w];
        for o in 0..w {
            x[o] = p[lay.prefix_b + o]
                + dot_f64(&p[lay.prefix_w + o * cfg.embed_dim..][..cfg.embed_dim], prefix)
                + p[lay.pos + o];
        }
        for (i, &tok) in inputs.iter().enumerate() {
            let row = &mut x[(i + 1) * w..(i + 2) * w];
            let emb = &p[lay.tok + tok as usize * w..][..w];
            let pos = &p[lay.pos + (i + 1) * w..][..w];
            for k in 0..w {
                row[k] = emb[k] + pos[k];
            }
        }

        let mut blocks = Vec::with_capacity(cfg.layers);
        for b in &lay.blocks {
            let (a, ln1) = layer_norm(&x, t, w, &p[b.ln1_g..][..w], &p[b.ln1_b..][..w]);
            let qkv = linear(&a, t, &p[b.qkv_w..][..3 * w * w], &p[b.qkv_b..][..3 * w], w, 3 * w);
            let (att, probs) = attention(&qkv, t, w, h);
            let o = linear(&att, t, &p[b.out_w..][..w * w], &p[b.out_b..][..w], w, w);
            x.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);
            let (m, ln2) = layer_norm(&x, t, w, &p[b.ln2_g..][..w], &p[b.ln2_b..][..w]);
            let fc_pre = linear(&m, t, &p[b.fc_w..][..f * w], &p[b.fc_b..][..f], w, f);
            let fc_act: Vec<f64> = fc_pre.iter().map(|&z| gelu(z)).collect();
            let y = linear(&fc_act, t, &p[b.proj_w..][..w * f], &p[b.proj_b..][..w], f, w);
            x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi += yi);
            blocks.push(BlockCache { ln1, a, qkv, probs, att, ln2, m, fc_pre, fc_act });
        }
        let (hf, lnf) = layer_norm(&x, t, w, &p[lay.lnf_g..][..w], &p[lay.lnf_b..][..w]);
        let logits = linear(&hf, t, &p[lay.head_w..][..v * w], &p[lay.head_b..][..v], w, v);
        Cache { t, blocks, lnf, hf, logits }
    }

    fn backward(&self, cache: &Cache, prefix: &[f64], inputs: &[u32], dlogits: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let (w, f, h, v) = (cfg.width, cfg.ffn_dim, cfg.heads, self.vocab.len());
        let t = cache.t;
        let p = &self.params;
        let lay = &self.layout;

        let mut dhf = vec![0.0; t * w];
        linear_backward(&cache.hf, t, p, lay.head_w, dlogits, w, v, Some(&mut dhf), grad, lay.head_b);
        let mut dx = vec![0.0; t * w];
        layer_norm_backward(&dhf, &cache.lnf, t, w, p, lay.lnf_g, &mut dx, grad, lay.lnf_b);

        for (b, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch
            let mut dact = vec![0.0; t * f];
            linear_backward(&c.fc_act, t, p, b.proj_w, &dx, f, w, Some(&mut dact), grad, b.proj_b);
            for (d, &z) in dact.iter_mut().zip(&c.fc_pre) {
                *d *= gelu_grad(z);
            }
            let mut dm = vec![0.0; t * w];
            linear_backward(&c.m, t, p, b.fc_w, &dact, w, f, Some(&mut dm), grad, b.fc_b);
            layer_norm_backward(&dm, &c.ln2, t, w, p, b.ln2_g, &mut dx, grad, b.ln2_b);
            // attention branch
            let mut datt = vec![0.0; t * w];
            linear_backward(&c.att, t, p, b.out_w, &dx, w, w, Some(&mut datt), grad, b.out_b);
            let dqkv = attention_backward(&c.qkv, &c.probs, &datt, t, w, h);
            let mut da = vec![0.0; t * w];
            linear_backward(&c.a, t, p, b.qkv_w, &dqkv, w, 3 * w, Some(&mut da), grad, b.qkv_b);
            layer_norm_backward(&da, &c.ln1, t, w, p, b.ln1_g, &mut dx, grad, b.ln1_b);
        }

        let d0 = &dx[..w];
        for o in 0..w {
            grad[lay.prefix_b + o] += d0[o];
            axpy(&mut grad[lay.prefix_w + o * cfg.embed_dim..][..cfg.embed_dim], d0[o], prefix);
        }
        for i in 0..t {
            let drow = &dx[i * w..(i + 1) * w];
            axpy(&mut grad[lay.pos + i * w..][..w], 1.0, drow);
            if i > 0 {
                let tok = inputs[i - 1] as usize;
                axpy(&mut grad[lay.tok + tok * w..][..w], 1.0, drow);
            }
        }
    }

    /// Logits for every position of `[prefix, inputs…]`, row-major `(1 + inputs.len()) × vocab`.
    pub fn logits(&self, prefix: &[f64], inputs: &[u32]) -> Result<Vec<f64>> {
        self.check_prefix(prefix)?;
        if inputs.len() + 1 > self.config.positions() {
            return Err(Error::SequenceTooLong { len: inputs.len(), max_len: self.config.positions() - 1 });
        }
        if let Some(bad) = inputs.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        Ok(self.forward(prefix, inputs).logits)
    }

    /// Distribution over the token following `<bos> context…`.
    pub fn next_token_distribution(&self, prefix: &[f64], context: &[u32]) -> Result<Vec<f64>> {
        let mut inputs = Vec::with_capacity(context.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(context);
        let logits = self.logits(prefix, &inputs)?;
        let v = self.vocab.len();
        let last = &logits[logits.len() - v..];
        Ok(softmax(last))
    }

    /// Reconstruction loss: mean over the sentence positions (and the
    /// closing `<eos>`) of the label-smoothed negative log-likelihood of each
    /// token given its predecessors and the prefix.
    pub fn recons_loss(&self, prefix: &[f64], tokens: &[u32], smoothing: f64) -> Result<f64> {
        self.check_prefix(prefix)?;
        self.check_tokens(tokens)?;
        let inputs = with_bos(tokens);
        let cache = self.forward(prefix, &inputs);
        Ok(smoothed_nll(&cache.logits, tokens, self.vocab.len(), smoothing, None))
    }

    /// Loss plus its gradient, accumulated into `grad` (same layout as `params`).
    pub fn loss_and_grad(&self, prefix: &[f64], tokens: &[u32], smoothing: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_prefix(prefix)?;
        self.check_tokens(tokens)?;
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grad.len() });
        }
        let inputs = with_bos(tokens);
        let cache = self.forward(prefix, &inputs);
        let mut dlogits = vec![0.0; cache.logits.len()];
        let loss = smoothed_nll(&cache.logits, tokens, self.vocab.len(), smoothing, Some(&mut dlogits));
        self.backward(&cache, prefix, &inputs, &dlogits, grad);
        Ok(loss)
    }
}

fn with_bos(tokens: &[u32]) -> Vec<u32> {
    let mut v = Vec::with_capacity(tokens.len() + 1);
    v.push(BOS);
    v.extend_from_slice(tokens);
    v
}

/// Smoothed cross-entropy over positions `1..=L` of `logits` against
/// `tokens ++ [<eos>]`, averaged. Writes `∂loss/∂logits` when asked.
fn smoothed_nll(logits: &[f64], tokens: &[u32], v: usize, smoothing: f64, mut dlogits: Option<&mut [f64]>) -> f64 {
    let n = tokens.len() + 1;
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let target = tokens.get(i).copied().unwrap_or(EOS) as usize;
        let row = &logits[(i + 1) * v..(i + 2) * v];
        let (loss, probs) = smoothed_cross_entropy(row, target, smoothing);
        total += loss;
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[(i + 1) * v..(i + 2) * v];
            for k in 0..v {
                let q = smoothing / v as f64 + if k == target { 1.0 - smoothing } else { 0.0 };
                drow[k] = (probs[k] - q) * scale;
            }
        }
    }
    total * scale
}

/// `-Σₖ qₖ log softmax(z)ₖ` with `q = (1-ε)·onehot + ε/V`; also returns softmax(z).
pub fn smoothed_cross_entropy(logits: &[f64], target: usize, smoothing: f64) -> (f64, Vec<f64>) {
    let v = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let mean_logit = logits.iter().sum::<f64>() / v;
    let loss = lse - (1.0 - smoothing) * logits[target] - smoothing * mean_logit;
    let probs = logits.iter().map(|z| (z - lse).exp()).collect();
    (loss, probs)
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[inline]
fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n_out];
    // weight rows outermost so each is streamed once per call
    for o in 0..n_out {
        let wo = &w[o * n_in..(o + 1) * n_in];
        for r in 0..rows {
            y[r * n_out + o] = b[o] + dot_f64(wo, &x[r * n_in..(r + 1) * n_in]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    rows: usize,
    params: &[f64],
    w_off: usize,
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    mut dx: Option<&mut [f64]>,
    grad: &mut [f64],
    b_off: usize,
) {
    for o in 0..n_out {
        let gw = &mut grad[w_off + o * n_in..][..n_in];
        let wo = &params[w_off + o * n_in..][..n_in];
        let mut gb = 0.0;
        for r in 0..rows {
            let g = dy[r * n_out + o];
            if g == 0.0 {
                continue;
            }
            gb += g;
            axpy(gw, g, &x[r * n_in..(r + 1) * n_in]);
            if let Some(dx) = dx.as_deref_mut() {
                axpy(&mut dx[r * n_in..(r + 1) * n_in], g, wo);
            }
        }
        grad[b_off + o] += gb;
    }
}

fn layer_norm(x: &[f64], rows: usize, w: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * w];
    let mut xhat = vec![0.0; rows * w];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * w..(r + 1) * w];
        let mean = xr.iter().sum::<f64>() / w as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for k in 0..w {
            let xh = (xr[k] - mean) * rs;
            xhat[r * w + k] = xh;
            y[r * w + k] = g[k] * xh + b[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates into `dx`, `grad[g_off..]` and `grad[b_off..]`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    rows: usize,
    w: usize,
    params: &[f64],
    g_off: usize,
    dx: &mut [f64],
    grad: &mut [f64],
    b_off: usize,
) {
    let g = &params[g_off..g_off + w];
    let mut dxhat = vec![0.0; w];
    for r in 0..rows {
        let dyr = &dy[r * w..(r + 1) * w];
        let xh = &cache.xhat[r * w..(r + 1) * w];
        for k in 0..w {
            dxhat[k] = dyr[k] * g[k];
            grad[g_off + k] += dyr[k] * xh[k];
            grad[b_off + k] += dyr[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / w as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / w as f64;
        let rs = cache.rstd[r];
        for k in 0..w {
            dx[r * w + k] += rs * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Causal multi-head attention over a packed `[q | k | v]` row per position.
fn attention(qkv: &[f64], t: usize, w: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let hd = w / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let stride = 3 * w;
    let mut out = vec![0.0; t * w];
    let mut probs = vec![0.0; heads * t * t];
    for h in 0..heads {
        for i in 0..t {
            let q = &qkv[i * stride + h * hd..][..hd];
            let pr = &mut probs[(h * t + i) * t..][..t];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let k = &qkv[j * stride + w + h * hd..][..hd];
                pr[j] = dot_f64(q, k) * scale;
                max = max.max(pr[j]);
            }
            let mut sum = 0.0;
            for pj in pr[..=i].iter_mut() {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            let o = &mut out[i * w + h * hd..][..hd];
            for j in 0..=i {
                pr[j] /= sum;
                axpy(o, pr[j], &qkv[j * stride + 2 * w + h * hd..][..hd]);
            }
        }
    }
    (out, probs)
}

fn attention_backward(qkv: &[f64], probs: &[f64], dout: &[f64], t: usize, w: usize, heads: usize) -> Vec<f64> {
    let hd = w / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let stride = 3 * w;
    let mut dqkv = vec![0.0; t * stride];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        for i in 0..t {
            let pr = &probs[(h * t + i) * t..][..t];
            let d = &dout[i * w + h * hd..][..hd];
            for j in 0..=i {
                let vj = &qkv[j * stride + 2 * w + h * hd..][..hd];
                dp[j] = dot_f64(d, vj);
                axpy(&mut dqkv[j * stride + 2 * w + h * hd..][..hd], pr[j], d);
            }
            let inner: f64 = (0..=i).map(|j| pr[j] * dp[j]).sum();
            for j in 0..=i {
                let ds = pr[j] * (dp[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                let (qi, kj) = (i * stride + h * hd, j * stride + w + h * hd);
                for c in 0..hd {
                    let (q, k) = (qkv[qi + c], qkv[kj + c]);
                    dqkv[qi + c] += ds * k;
                    dqkv[kj + c] += ds * q;
                }
            }
        }
    }
    dqkv
}
