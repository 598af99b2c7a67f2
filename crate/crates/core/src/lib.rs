//! Unsupervised bilingual lexicon induction through a shared grounding
//! space: corpora and vocabularies, skip-gram embeddings, the grounded joint
//! embedding model, linear alignment (Procrustes, CSLS, self-learning and
//! AdaptLayer-seeded refinement), baselines, evaluation and a synthetic
//! world generator.

pub mod alignment;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod linalg;
pub mod pipeline;
pub mod synthworld;

pub use error::{Error, Result};
