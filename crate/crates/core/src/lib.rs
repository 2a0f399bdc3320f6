//! Style retrieval for expressive speech synthesis.
//!
//! A small dictionary of reference utterances, each labelled with a free-form
//! style description, is searched with a natural-language style prompt (or
//! with the sentence to be spoken). The winning reference's Gaussian style
//! latent is sampled and packaged, together with a speaking-rate coefficient,
//! into a request for a synthesis backend.
//!
//! Modules:
//! - [`annotation`]: the labelled dictionary and its file format.
//! - [`selector`]: chat-model, embedding-cosine and mock selectors.
//! - [`latent`]: latent sampling, KL, loss weighting, duration scaling.
//! - [`gateway`]: end-to-end request assembly and journaled dispatch.
//! - [`eval`]: hit-rate ablation and listening-test score aggregation.

pub mod annotation;
pub mod eval;
pub mod gateway;
pub mod latent;
pub mod selector;
pub mod transport;

pub use annotation::{AnnotationDictionary, AnnotationEntry};
pub use gateway::{Dispatcher, Gateway, Journal, SynthesisBackend, SynthesisRequest};
pub use latent::{LatentBank, LatentSpec};
pub use selector::{PromptKind, RetrievalResult, Selector, SelectorConfig, StylePrompt};
