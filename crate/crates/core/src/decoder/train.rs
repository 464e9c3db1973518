use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::DecoderModel;
use super::vocab::Tokenizer;
use crate::corpus::{CorpusEntry, TextEncoder};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub label_smoothing: f64,
    /// Linear ramp from 0 to `learning_rate`; constant afterwards.
    pub warmup_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Table values used for the full-scale runs (40k steps on 560k captions).
    pub fn reference() -> Self {
        TrainConfig {
            steps: 40_000,
            batch_size: 128,
            learning_rate: 1e-5,
            label_smoothing: 0.1,
            warmup_steps: 2_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument("label_smoothing must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        }
    }
}

/// Scaled-down defaults for toy corpora.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3_000,
            batch_size: 32,
            learning_rate: 1e-3,
            label_smoothing: 0.1,
            warmup_steps: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    /// Mean step loss per pass over the corpus (the last may be partial).
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.step_losses.last().copied()
    }
}

/// A tokenized sentence with its frozen conditioning embedding.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub prefix: Embedding,
    pub tokens: Vec<u32>,
}

/// Encode and tokenize the corpus once; the encoder is never updated.
pub fn prepare_examples<E: TextEncoder + ?Sized>(
    model: &DecoderModel,
    corpus: &[CorpusEntry],
    encoder: &E,
) -> Result<Vec<TrainingExample>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    corpus
        .par_iter()
        .map(|entry| {
            let tokens = model.vocab().tokenize(&entry.text)?;
            let prefix = encoder.encode(&entry.text)?.normalized()?;
            Ok(TrainingExample { prefix, tokens })
        })
        .collect()
}

/// AdamW state over the flat parameter vector.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + cfg.adam_eps) + cfg.weight_decay * params[i]);
        }
    }
}

fn tree_sum(mut parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((la, mut ga)) = it.next() {
            match it.next() {
                Some((lb, gb)) => {
                    ga.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
                    next.push((la + lb, ga));
                }
                None => next.push((la, ga)),
            }
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Examples accumulated into one gradient buffer before the tree reduction.
const GRAD_CHUNK: usize = 4;

/// Mean loss and gradient over a batch. Fixed-size chunks run in parallel
/// and are reduced in a fixed order, so the result does not depend on the
/// thread count.
pub fn batch_loss_and_grad(model: &DecoderModel, batch: &[&TrainingExample], smoothing: f64) -> Result<(f64, Vec<f64>)> {
    let n = model.num_params();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            for ex in chunk {
                loss += model.loss_and_grad(ex.prefix.as_slice(), &ex.tokens, smoothing, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let (loss, mut grad) = tree_sum(parts);
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Minimize the reconstruction loss over `corpus`, conditioning each
/// sentence on its own frozen text embedding.
pub fn train<E: TextEncoder + ?Sized>(
    model: &mut DecoderModel,
    corpus: &[CorpusEntry],
    encoder: &E,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let examples = prepare_examples(model, corpus, encoder)?;
    train_examples(model, &examples, config)
}

pub fn train_examples(model: &mut DecoderModel, examples: &[TrainingExample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for ex in examples {
        if ex.tokens.len() > model.config().max_len {
            return Err(Error::SequenceTooLong { len: ex.tokens.len(), max_len: model.config().max_len });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(model.num_params());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport::default();
    let mut epoch_sum = 0.0;
    let mut epoch_steps = 0usize;

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                if epoch_steps > 0 {
                    report.epoch_losses.push(epoch_sum / epoch_steps as f64);
                    epoch_sum = 0.0;
                    epoch_steps = 0;
                }
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let (loss, mut grad) = batch_loss_and_grad(model, &batch, config.label_smoothing)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite);
        }
        if let Some(clip) = config.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        opt.step(model.params_mut(), &grad, config.lr_at(step), config);
        report.step_losses.push(loss);
        epoch_sum += loss;
        epoch_steps += 1;
    }
    if epoch_steps > 0 {
        report.epoch_losses.push(epoch_sum / epoch_steps as f64);
    }
    Ok(report)
}
