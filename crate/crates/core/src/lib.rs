//! Retrieval-based query rewriting for spoken-language-understanding
//! pipelines.
//!
//! The crate trains a dual-encoder query embedder with an in-batch
//! contrastive objective, optionally pretrains it on session logs (alone or
//! jointly with serialized NLU hypotheses), indexes rewrite candidates for
//! exact and coarse-quantized nearest-neighbor search, and scores retrieval
//! quality with p@n and reciprocal-rank metrics. A synthetic session
//! generator provides deterministic desk-scale corpora.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod index;
pub mod objective;
pub mod textproc;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
