//! Explanatory knowledge transfer for multiple-choice science QA.
//!
//! Facts from semi-structured explanation tables are normalized into
//! triples, recast as knowledge-base completion pairs, and used to pre-train
//! a transformer pair classifier. The classifier is then trained on
//! cloze-style QA and optionally fine-tuned on a target dataset. A BM25
//! retrieval solver provides the baseline.

pub mod bm25;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod kb;
pub mod model;
pub mod qa;
pub mod runner;
pub mod synth;
pub mod taskgen;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
