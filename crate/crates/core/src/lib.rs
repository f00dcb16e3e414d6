//! Retrieval-based data curation for few-shot imitation learning.
//!
//! Given a handful of target demonstrations and a large prior corpus, the
//! pipeline segments the targets at motion pauses, retrieves matching prior
//! sub-trajectories separately for every embedding modality with subsequence
//! DTW, scores each modality by how well a reference model fitted on its
//! retrieved data explains the target actions, turns the scores into
//! softmax weights and finally draws an importance-sampled stream of
//! training windows.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod matrix;
pub mod pipeline;
pub mod retrieval;
pub mod sampler;
pub mod segmenter;
pub mod synthbench;
pub mod trajstore;
pub mod weighting;

pub use error::{Error, Result};
pub use exec::Executor;
pub use matrix::Matrix;
