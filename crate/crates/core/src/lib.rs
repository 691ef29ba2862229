//! Core library for synthetic many-shot in-context ML tasks.
//!
//! The pipeline runs in five stages, each usable on its own:
//!
//! 1. [`scm`] samples structural causal models (MLP-shaped DAGs whose node
//!    mechanisms are activations or fitted boosted-tree regressors) and
//!    propagates noise through them to produce raw tabular samples.
//! 2. [`task`] types the raw columns, bins the scalar target into `K`
//!    classes, and splits rows into demonstrations and id'd queries.
//! 3. [`guard`] admits or rejects a task based on whether a random-forest
//!    teacher beats chance on it (exact binomial tail test, Cohen's kappa,
//!    balanced accuracy, macro-F1 dominance, non-collapse checks), and
//!    optionally applies the warm-up consensus filter.
//! 4. [`codec`] serializes tasks into the compact tabular prompt format
//!    with [0,999] integer cells, builds the JSON target string, parses
//!    model responses, and accounts token costs.
//! 5. [`consistency`] and [`harness`] run the chunked, shuffled-variant,
//!    confidence-weighted evaluation protocol over pluggable backends.
//!
//! Everything is deterministic given a seed: the same configuration and
//! master seed reproduce the same corpus bit for bit, regardless of how
//! work is sharded across threads.
//!
//! The crate is `no_std + alloc`; IO, file formats, and the CLI live in
//! the companion `manyshot-cli` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codec;
pub mod config;
pub mod consistency;
pub mod error;
pub mod guard;
pub mod harness;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod scm;
pub mod task;
pub mod trees;

pub use config::{CorpusConfig, GuardConfig};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
