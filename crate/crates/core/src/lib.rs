//! Multi-task retrieval embedder trained with a composite recipe: contrastive
//! learning on hard labels, reward-weighted listwise distillation from a
//! generation-likelihood oracle, instruction-prefixed encoding, and homogeneous
//! in-batch negative sampling. Ships with an exact inner-product vector index
//! and evaluation harnesses for five retrieval-augmentation scenarios
//! (knowledge QA, long-context memory, in-context examples, tool selection,
//! conversational search).
//!
//! Data-parallel inner loops (batch encoding, index search, per-item
//! evaluation) run on rayon when the default `parallel` feature is enabled;
//! build with `--no-default-features` for the sequential fallback. Every
//! parallel path has an always-compiled `*_seq` twin so the criterion bench
//! suite can compare both.

pub mod batching;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod index;
pub mod losses;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
