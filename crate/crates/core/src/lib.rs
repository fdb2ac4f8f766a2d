//! Context-based sentence similarity.
//!
//! Two sentences are compared by how well each of them fits a shared set of
//! retrieved contexts: every context gets a fit score per sentence, the scores
//! form one vector per sentence over the shared context list, and similarity
//! is the cosine between those vectors. A cheap siamese encoder can then be
//! distilled from pairs labeled by that pipeline so lookups run fast.

pub mod contextset;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fileio;
pub mod harvest;
pub mod origin;
pub mod pipeline;
pub mod retrieval;
pub mod scorers;
pub mod surrogate;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
