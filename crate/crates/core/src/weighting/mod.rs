//! Modality relevance scores and importance weights.
//!
//! Each modality's retrieved data fits a [`ReferenceScorer`]; the summed
//! log-likelihood of all target (state, action) pairs under that scorer,
//! averaged over a set of retained checkpoints, is the modality score.
//! Scores become weights through a temperature softmax.

mod knn;
mod softmax;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajstore::{Dataset, Frame};

pub use knn::{fit_reference, KnnGaussianConfig, KnnGaussianScorer, LookupSpace};
pub use softmax::{softmax_weights, ModalityWeights, REAL_TEMPERATURE, SIMULATION_TEMPERATURE};

/// A model fitted on one modality's retrieved frames that can score target actions.
///
/// Iterative models expose their training checkpoints; non-iterative ones map
/// each checkpoint to one setting of a hyperparameter sweep.
pub trait ReferenceScorer: Send + Sync {
    fn checkpoints(&self) -> usize;

    /// `log p(action | state, instruction)` at `checkpoint`.
    fn log_likelihood(&self, checkpoint: usize, frame: &Frame<'_>, instruction: &str) -> Result<f64>;

    /// Log-likelihoods for several checkpoints at once, in the given order.
    fn log_likelihoods(&self, checkpoints: &[usize], frame: &Frame<'_>, instruction: &str) -> Result<Vec<f64>> {
        checkpoints.iter().map(|&c| self.log_likelihood(c, frame, instruction)).collect()
    }
}

/// Which checkpoints contribute to the modality score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSchedule {
    pub retained: Vec<usize>,
}

impl CheckpointSchedule {
    /// Keeps the later half of `total` evenly spaced checkpoints
    /// (5 of 10 gives indices 5..10).
    pub fn later_half(total: usize) -> Self {
        Self { retained: (total / 2..total).collect() }
    }

    pub fn single(index: usize) -> Self {
        Self { retained: vec![index] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityScore {
    pub modality: String,
    pub checkpoint_scores: Vec<f64>,
    /// Mean of `checkpoint_scores`; `-inf` when the modality retrieved nothing.
    #[serde(with = "finite_or_null")]
    pub score: f64,
}

impl ModalityScore {
    pub fn from_checkpoints(modality: impl Into<String>, checkpoint_scores: Vec<f64>) -> Self {
        let score = if checkpoint_scores.is_empty() {
            f64::NEG_INFINITY
        } else {
            checkpoint_scores.iter().sum::<f64>() / checkpoint_scores.len() as f64
        };
        Self { modality: modality.into(), checkpoint_scores, score }
    }

    /// Sentinel for a modality whose retrieved set is empty.
    pub fn empty(modality: impl Into<String>) -> Self {
        Self::from_checkpoints(modality, Vec::new())
    }
}

pub fn score_modality(
    modality: &str,
    scorer: &dyn ReferenceScorer,
    target: &Dataset,
    schedule: &CheckpointSchedule,
) -> Result<ModalityScore> {
    if target.is_empty() {
        return Err(Error::NoData("target dataset is empty".into()));
    }
    if let Some(&bad) = schedule.retained.iter().find(|&&c| c >= scorer.checkpoints()) {
        return Err(Error::Argument(format!("checkpoint {bad} out of range; scorer has {}", scorer.checkpoints())));
    }
    if schedule.retained.is_empty() {
        return Err(Error::Argument("checkpoint schedule is empty".into()));
    }
    let mut sums = vec![0.0f64; schedule.retained.len()];
    for t in target.trajectories() {
        for frame in t.frames() {
            let ll = scorer.log_likelihoods(&schedule.retained, &frame, &t.instruction)?;
            for (s, v) in sums.iter_mut().zip(ll) {
                *s += v;
            }
        }
    }
    Ok(ModalityScore::from_checkpoints(modality, sums))
}

/// Scores produced outside this crate, e.g. by a neural reference policy.
///
/// File format: `{"checkpoint_scores": {"<modality>": [s_1, s_2, ...], ...}}`;
/// an empty list marks a modality without data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub checkpoint_scores: BTreeMap<String, Vec<f64>>,
}

impl ExternalScores {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), detail: e.to_string() })
    }

    pub fn scores(&self) -> Vec<ModalityScore> {
        self.checkpoint_scores.iter().map(|(m, v)| ModalityScore::from_checkpoints(m.clone(), v.clone())).collect()
    }
}

pub(crate) mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}
