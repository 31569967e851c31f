//! Offline-first evaluation harness for large language models used as
//! recommenders.
//!
//! The crate covers the whole loop: corpus ingestion and leave-one-out
//! instances ([`corpus`]), traditional comparators ([`baselines`]), user
//! interest modeling ([`interest`]), candidate construction and output
//! grounding ([`candidates`]), prompt rendering ([`prompting`]), LLM and
//! embedding access ([`llmio`]), ranking metrics ([`evaluator`]) and the
//! click-through-rate task ([`ctr`]).

pub mod baselines;
pub mod candidates;
pub mod corpus;
pub mod ctr;
pub mod evaluator;
pub mod hashing;
pub mod interest;
pub mod llmio;
pub mod prompting;

pub use corpus::{Catalog, EvalInstance, Interaction, ItemRecord, UserHistory};
