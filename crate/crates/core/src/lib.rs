//! Embedding-space toolkit for evaluating speaker-anonymization mapping
//! strategies.
//!
//! The crate works entirely on speaker embeddings (any real-valued vectors in
//! the CSV interchange format of [`embedding`]); it knows nothing about audio.
//! It provides:
//!
//! - [`embedding`] — the labeled embedding data model and CSV I/O.
//! - [`dispersion`] — within/between-class scatter matrices, the generalized
//!   eigenproblem, and the scatter ratio J.
//! - [`asv`] — verification trials, cosine scoring, EER with an independent
//!   brute-force oracle, linkability and de-identification evaluations.
//! - [`mapping`] — pseudo-speaker selection strategies and the any-to-one /
//!   any-to-any anonymization operator with a residual-leakage model.
//! - [`sim`] — seeded synthetic speaker populations and the three-experiment
//!   pipeline (dispersion, linkability, de-identification) with trend checks.
//!
//! Everything is deterministic given explicit seeds; there are no wall-clock
//! or entropy inputs anywhere.

pub mod asv;
pub mod dispersion;
pub mod embedding;
pub mod error;
pub mod mapping;
pub mod seeding;
pub mod sim;

pub use embedding::{load_embeddings, save_embeddings, EmbeddingSet, SpeakerSummary, UtteranceRecord};
pub use error::{Error, ErrorClass, Result};
