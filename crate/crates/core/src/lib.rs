//! Caption decoding from a text-only trained decoder.
//!
//! A decoder learns to reconstruct sentences from their frozen text
//! embeddings. At inference an image (or video) embedding is projected into
//! the text embedding space as a temperature-softmax combination of a
//! support memory of text embeddings, and the projection is decoded.

pub mod corpus;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod eval;
mod io_util;
pub mod memory;
pub mod strategies;
pub mod toy;

pub use corpus::{CorpusEntry, LookupEncoder, TextEncoder};
pub use embedding::{cosine, project, Embedding, ProjectionConfig, ProjectionResult, RawEmbedding};
pub use error::{Error, Result};
pub use io_util::atomic_write;
pub use memory::SupportMemory;
