//! Language modeling with factorized embedding and softmax layers.
//!
//! Embedding and output matrices are written as `E = C × E^c`: a fixed,
//! codebook-driven sparse matrix times a small structured dense matrix of
//! sub-unit embeddings. The crate covers vocabularies and codebooks, the
//! factorized lookups and logits, an LSTM language model with hand-written
//! backpropagation, training, perplexity, parameter accounting and scalar
//! quantization of checkpoints.

pub mod checkpoint;
pub mod cli;
pub mod codebook;
pub mod config;
pub mod corpus;
pub mod error;
pub mod factorization;
pub mod model;
pub mod params;
pub mod quantization;
pub mod real;
pub mod report;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
