//! Streaming inference for robust infinite hidden Markov models.
//!
//! The engine runs a particle-learning filter over a hierarchical Dirichlet
//! process HMM with linear-Gaussian emissions. Three variants are exposed: the
//! plain online iHMM, the weighted-likelihood (WoLF) iHMM, and the batched
//! robust iHMM that scores states over a short look-ahead batch.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod datasets;
pub mod emission;
pub mod error;
pub mod filter;
pub mod hdp;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
