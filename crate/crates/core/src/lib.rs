//! Predictive sparse manifold transform (PSMT).
//!
//! A two-layer unsupervised model for patch sequences:
//!
//! 1. a non-negative sparse coding layer over an overcomplete dictionary
//!    ([`sparse`]),
//! 2. a linear embedding of the codes, re-solved over a sliding window, that
//!    makes temporal trajectories as straight as possible under a whitening
//!    constraint ([`embedding`]).
//!
//! Prediction extrapolates linearly in the embedding space, recovers a
//! non-negative code from the extrapolated embedding and maps it back through
//! the dictionary ([`predictor`]). [`topology`] inspects the embedding
//! columns as a similarity graph, and [`harness`] runs the reconstruction grid
//! and prediction comparisons.

pub mod embedding;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod predictor;
pub mod signal;
pub mod sparse;
pub mod stats;
pub mod synth;
pub mod topology;

pub use error::{PsmtError, Result};
