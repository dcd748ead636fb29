//! Reflection-gated secure code repair.
//!
//! A sample is first routed by a one-word SAFE/UNSAFE self-check. Unsafe
//! samples are repaired over a bounded number of reflection rounds, each
//! prompt carrying evidence retrieved from a two-tier memory of verified fixes
//! and static guidance. Candidates must pass a compile / test / static-scan
//! gate before they are accepted and written back to memory, and every task
//! leaves a hash-chained, replayable audit record.
//!
//! The [`bench`] module drives multi-run experiments over a scenario corpus
//! and computes the evaluation tables.

pub mod bench;
pub mod clock;
pub mod embedding;
pub mod memory;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod sample;
pub mod self_check;
pub mod verifier;

pub use pipeline::{Engine, RunConfig, TaskOutcome, TaskStatus};
pub use sample::{CodeSample, Language};
