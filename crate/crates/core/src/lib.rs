//! Core library for constrained-prompt augmentation of knowledge graph
//! completion datasets.
//!
//! The crate covers the offline half of the pipeline:
//!
//! - [`corpus`]: dataset loading, statistics and polysemy groups
//! - [`tokenizer`]: greedy longest-match subword lengths
//! - [`router`]: length-based routing into compression / expansion
//! - [`prompt`]: constrained prompt templates
//! - [`cleaner`]: turning raw LLM responses into cleaned entity text
//! - [`assembler`]: truncation, `[CLS]`/`[SEP]` assembly and dataset export
//! - [`embed`]: TransE / DistMult / RotatE training and scoring
//! - [`eval`]: filtered link-prediction metrics
//!
//! Numerical code is generic over [`Scalar`]; the aliases below pin the
//! two float widths used in practice.

pub mod assembler;
pub mod cleaner;
pub mod corpus;
pub mod digest;
pub mod embed;
pub mod eval;
pub mod prompt;
pub mod router;
pub mod scalar;
pub mod tokenizer;

pub use corpus::{EntityId, EntityRecord, KnowledgeGraph, RelationId, Split, Triple};
pub use scalar::Scalar;
pub use tokenizer::SubwordVocabulary;

/// Single-precision embedding model, the default for training runs.
pub type EmbeddingModel32 = embed::EmbeddingModel<f32>;
/// Double-precision embedding model, used by gradient checks.
pub type EmbeddingModel64 = embed::EmbeddingModel<f64>;
/// Trainer producing [`EmbeddingModel32`].
pub type Trainer32 = embed::Trainer<f32>;
/// Trainer producing [`EmbeddingModel64`].
pub type Trainer64 = embed::Trainer<f64>;
