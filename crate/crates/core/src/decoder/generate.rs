use rayon::prelude::*;

use super::model::DecoderModel;
use super::vocab::{BOS, EOS};
use crate::embedding::kernels::argmax;
use crate::embedding::Embedding;
use crate::error::Result;
use crate::memory::SupportMemory;

/// Default generation cap when none is configured.
pub const DEFAULT_MAX_LEN: usize = 32;

/// Greedy decoding from a prefix embedding.
///
/// `prompt` tokens are forced right after `<bos>` and are part of the
/// returned sequence. Each further step takes the highest-scoring token
/// (lowest id on ties) until `<eos>` or `max_len` tokens (capped by the
/// model's own `max_len`). `<eos>` is not included in the output.
pub fn decode_greedy(model: &DecoderModel, prefix: &Embedding, prompt: &[u32], max_len: usize) -> Result<Vec<u32>> {
    let cap = max_len.min(model.config().max_len);
    let mut out: Vec<u32> = prompt.iter().copied().take(cap).collect();
    let v = model.vocab().len();
    let mut inputs = Vec::with_capacity(cap + 1);
    while out.len() < cap {
        inputs.clear();
        inputs.push(BOS);
        inputs.extend_from_slice(&out);
        let logits = model.logits(prefix.as_slice(), &inputs)?;
        let next = argmax(&logits[logits.len() - v..]).expect("non-empty vocabulary") as u32;
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

/// Decode every memory entry from its stored embedding, in memory order.
pub fn reconstruct_corpus(model: &DecoderModel, memory: &SupportMemory, prompt: &[u32]) -> Result<Vec<Vec<u32>>> {
    (0..memory.len())
        .into_par_iter()
        .map(|i| decode_greedy(model, &memory.embedding(i), prompt, model.config().max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{DecoderConfig, Vocab};

    fn model() -> DecoderModel {
        let vocab = Vocab::from_words(["x", "y", "z"]);
        let mut cfg = DecoderConfig::toy(4);
        cfg.width = 8;
        cfg.ffn_dim = 8;
        cfg.max_len = 5;
        DecoderModel::new(cfg, vocab, 3).unwrap()
    }

    fn prefix() -> Embedding {
        Embedding::normalize(&[1.0, 2.0, -1.0, 0.5]).unwrap().0
    }

    #[test]
    fn zero_length_is_empty() {
        assert!(decode_greedy(&model(), &prefix(), &[], 0).unwrap().is_empty());
        assert!(decode_greedy(&model(), &prefix(), &[3, 4], 0).unwrap().is_empty());
    }

    #[test]
    fn output_respects_caps_and_prompt() {
        let m = model();
        let out = decode_greedy(&m, &prefix(), &[4], 100).unwrap();
        assert!(out.len() <= 5);
        assert_eq!(out.first(), Some(&4));
        assert!(!out.contains(&EOS));
    }

    #[test]
    fn deterministic() {
        let m = model();
        let a = decode_greedy(&m, &prefix(), &[], 5).unwrap();
        let b = decode_greedy(&m, &prefix(), &[], 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_prefix_dimension() {
        let m = model();
        let p = Embedding::normalize(&[1.0, 0.0]).unwrap().0;
        assert!(decode_greedy(&m, &p, &[], 3).is_err());
    }
}
