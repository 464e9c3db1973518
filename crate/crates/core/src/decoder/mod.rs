//! Prefix-conditioned autoregressive decoder trained to reconstruct a
//! sentence from its own text embedding.

mod checkpoint;
mod generate;
mod model;
mod train;
mod vocab;

pub use checkpoint::{load_model, read_model, save_model, write_model};
pub use generate::{decode_greedy, reconstruct_corpus, DEFAULT_MAX_LEN};
pub use model::{smoothed_cross_entropy, DecoderConfig, DecoderModel, TensorSpec};
pub use train::{
    batch_loss_and_grad, prepare_examples, train, train_examples, TrainConfig, TrainReport,
    TrainingExample,
};
pub use vocab::{Tokenizer, Vocab, BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN};
