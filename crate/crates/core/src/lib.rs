//! Iterative label correction for noisy classification and sequence-labeling data.
//!
//! Each iteration trains a probabilistic classifier on the current labels, flags the
//! examples most likely to be misannotated for human review, optionally auto-corrects
//! confident disagreements, and filters likely-noisy examples out of training.

pub mod annotator;
pub mod classifier;
pub mod data;
pub mod engine;
mod error;
pub mod exec;
pub mod manifest;
pub mod metrics;
pub mod noise;
pub mod synth;

pub use error::{Error, Result};
pub use exec::{derive_seed, Execution};
