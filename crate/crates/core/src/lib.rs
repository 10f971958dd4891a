//! Emotion-polarity classification for Latin from weak supervision.
//!
//! The crate covers the full pipeline: treebank ingestion ([`corpus`]),
//! lexicon-driven labeling ([`lexicon`], [`heuristic`]), LLM-assisted
//! labeling ([`llm`]), a small adapter-equipped transformer encoder
//! ([`model`]), staged transfer training ([`train`]), and evaluation
//! ([`eval`]). The [`cli`] module ties them together behind one binary.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod heuristic;
pub mod lexicon;
pub mod llm;
pub mod model;
pub mod rng;
pub mod train;

pub use corpus::{AnnotatedExample, Label, Provenance, Sentence, Token};
pub use error::{Error, Result};
