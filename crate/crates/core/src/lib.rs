//! Cross-lingual alignment of decoder-only language models.
//!
//! Per-layer sentence embeddings of parallel text in a pivot language and a
//! target language are compared with cosine similarity; the score of a layer
//! is the fraction of parallel pairs that retrieve each other in both
//! directions. Scores pool over layers and, scaled by English task accuracy,
//! estimate task accuracy in other languages.

pub mod alignment;
pub mod cli;
pub mod dumpio;
pub mod error;
pub mod pooling;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
