use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIMULATION_TEMPERATURE: f64 = 2.0;
pub const REAL_TEMPERATURE: f64 = 10.0;

/// Normalized per-modality sampling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityWeights {
    pub weights: BTreeMap<String, f64>,
    pub temperature: Option<f64>,
    /// Scores the weights were derived from; `None` marks a modality without data.
    pub raw_scores: BTreeMap<String, Option<f64>>,
}

impl ModalityWeights {
    /// Equal weight for every listed modality (non-adaptive fusion).
    pub fn uniform<S: AsRef<str>>(modalities: &[S]) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::NoData("no modalities to weight".into()));
        }
        let w = 1.0 / modalities.len() as f64;
        Ok(Self {
            weights: modalities.iter().map(|m| (m.as_ref().to_string(), w)).collect(),
            temperature: None,
            raw_scores: BTreeMap::new(),
        })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(weights: BTreeMap<String, f64>) -> Result<Self> {
        if weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Argument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.values().sum();
        if !(total > 0.0) {
            return Err(Error::NoData("all weights are zero".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|(k, w)| (k, w / total)).collect(),
            temperature: None,
            raw_scores: BTreeMap::new(),
        })
    }

    pub fn get(&self, modality: &str) -> f64 {
        self.weights.get(modality).copied().unwrap_or(0.0)
    }

    /// Modality with the largest weight; the first in name order on ties.
    pub fn argmax(&self) -> Option<&str> {
        self.weights
            .iter()
            .fold(None::<(&str, f64)>, |best, (m, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((m.as_str(), w)),
            })
            .map(|(m, _)| m)
    }
}

/// `w_f = exp(S_f / tau) / sum exp(S_g / tau)`, computed after subtracting the
/// largest finite score. `-inf` scores get weight 0.
pub fn softmax_weights(scores: &BTreeMap<String, f64>, temperature: f64) -> Result<ModalityWeights> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Argument(format!("temperature must be positive, got {temperature}")));
    }
    if scores.values().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::Argument("scores must be finite or -inf".into()));
    }
    let max = scores.values().copied().filter(|s| s.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoData("every modality score is -inf".into()));
    }
    let exps: BTreeMap<&String, f64> =
        scores.iter().map(|(m, &s)| (m, if s.is_finite() { ((s - max) / temperature).exp() } else { 0.0 })).collect();
    let total: f64 = exps.values().sum();
    Ok(ModalityWeights {
        weights: exps.into_iter().map(|(m, e)| (m.clone(), e / total)).collect(),
        temperature: Some(temperature),
        raw_scores: scores.iter().map(|(m, &s)| (m.clone(), s.is_finite().then_some(s))).collect(),
    })
}
