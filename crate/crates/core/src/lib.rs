//! Discovery of claim propagation patterns in themed message streams, and a
//! small switch-steered language model for stance scoring and red-team
//! generation.

pub mod claims;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod pipeline;
pub mod propagation;
pub mod remote;
pub mod service;
pub mod stance_lm;
pub mod synthetic;
pub mod tokenize;

pub use corpus::{Corpus, Message, StanceLabel, ThemeTimeline};
pub use embedding::{EmbeddingProvider, EmbeddingVector};
pub use stance_lm::{BaseLM, SwitchedLM};
