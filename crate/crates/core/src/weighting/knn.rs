use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::retrieval::{squared_distance, RetrievedSet};
use crate::trajstore::{Dataset, Frame};

use super::ReferenceScorer;

/// Space in which neighbours of a target frame are looked up.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookupSpace {
    #[default]
    State,
    Modality(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGaussianConfig {
    pub k: usize,
    /// Neighbour counts treated as checkpoints. Defaults to ten values
    /// evenly spaced up to `10 * k / 8`, whose later half averages to `k`.
    pub sweep: Option<Vec<usize>>,
    pub variance_floor: f64,
    pub lookup: LookupSpace,
    /// Uniformly subsample the fitted frames (seeded) above this count.
    pub max_reference_frames: Option<usize>,
    /// Fit on each distinct prior frame once, even when several target
    /// segments retrieved it.
    pub deduplicate: bool,
}

impl Default for KnnGaussianConfig {
    fn default() -> Self {
        Self {
            k: 16,
            sweep: None,
            variance_floor: 1e-4,
            lookup: LookupSpace::State,
            max_reference_frames: None,
            deduplicate: true,
        }
    }
}

impl KnnGaussianConfig {
    pub fn sweep(&self) -> Vec<usize> {
        match &self.sweep {
            Some(s) => s.clone(),
            None => (1..=10).map(|i| ((self.k * i + 4) / 8).max(1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Argument("variance_floor must be positive".into()));
        }
        if self.sweep().contains(&0) || self.sweep().is_empty() {
            return Err(Error::Argument("k sweep must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// k-nearest-neighbour conditional Gaussian over actions.
///
/// For a target frame, the `k` retrieved frames closest in the lookup space
/// (ties by insertion order) give a diagonal Gaussian over actions; per-dimension
/// variances are floored at `variance_floor`.
#[derive(Debug, Clone)]
pub struct KnnGaussianScorer {
    keys: Matrix<f32>,
    actions: Matrix<f32>,
    sweep: Vec<usize>,
    variance_floor: f64,
    lookup: LookupSpace,
}

impl KnnGaussianScorer {
    pub fn new(keys: Matrix<f32>, actions: Matrix<f32>, config: &KnnGaussianConfig) -> Result<Self> {
        config.validate()?;
        if keys.rows() == 0 || keys.rows() != actions.rows() {
            return Err(Error::Argument(format!(
                "need matching non-empty keys and actions, got {} and {}",
                keys.rows(),
                actions.rows()
            )));
        }
        Ok(Self {
            keys,
            actions,
            sweep: config.sweep(),
            variance_floor: config.variance_floor,
            lookup: config.lookup.clone(),
        })
    }

    pub fn reference_frames(&self) -> usize {
        self.keys.rows()
    }

    pub fn sweep(&self) -> &[usize] {
        &self.sweep
    }

    fn query_key<'a>(&self, frame: &Frame<'a>) -> Result<&'a [f32]> {
        let key = match &self.lookup {
            LookupSpace::State => frame.state(),
            LookupSpace::Modality(m) => {
                frame.embedding(m).ok_or_else(|| Error::Argument(format!("target frame has no `{m}` embedding")))?
            }
        };
        if key.len() != self.keys.cols() {
            return Err(Error::Argument(format!(
                "lookup key has dimension {}, scorer was fitted on {}",
                key.len(),
                self.keys.cols()
            )));
        }
        Ok(key)
    }

    /// Indices of the `k` nearest reference frames, nearest first.
    fn neighbours(&self, key: &[f32], k: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> =
            self.keys.iter_rows().enumerate().map(|(i, r)| (squared_distance(key, r), i)).collect();
        let k = k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    fn gaussian_log_density(&self, neighbours: &[usize], action: &[f32]) -> f64 {
        let n = neighbours.len() as f64;
        let mut total = 0.0;
        for (dim, &a) in action.iter().enumerate() {
            let mean = neighbours.iter().map(|&i| self.actions.get(i, dim) as f64).sum::<f64>() / n;
            let var = neighbours
                .iter()
                .map(|&i| {
                    let d = self.actions.get(i, dim) as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let var = var.max(self.variance_floor);
            let r = a as f64 - mean;
            total += -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var);
        }
        total
    }
}

impl ReferenceScorer for KnnGaussianScorer {
    fn checkpoints(&self) -> usize {
        self.sweep.len()
    }

    fn log_likelihood(&self, checkpoint: usize, frame: &Frame<'_>, instruction: &str) -> Result<f64> {
        Ok(self.log_likelihoods(&[checkpoint], frame, instruction)?[0])
    }

    fn log_likelihoods(&self, checkpoints: &[usize], frame: &Frame<'_>, _instruction: &str) -> Result<Vec<f64>> {
        let key = self.query_key(frame)?;
        let action = frame.action();
        if action.len() != self.actions.cols() {
            return Err(Error::Incompatible(format!(
                "target action dimension {} differs from fitted {}",
                action.len(),
                self.actions.cols()
            )));
        }
        let ks: Vec<usize> = checkpoints
            .iter()
            .map(|&c| self.sweep.get(c).copied().ok_or_else(|| Error::Argument(format!("checkpoint {c} out of range"))))
            .collect::<Result<_>>()?;
        let kmax = ks.iter().copied().max().unwrap_or(1);
        let nearest = self.neighbours(key, kmax);
        Ok(ks.iter().map(|&k| self.gaussian_log_density(&nearest[..k.min(nearest.len())], action)).collect())
    }
}

/// Fits the built-in scorer on every frame inside the retrieved spans.
///
/// Returns `None` for an empty retrieved set; such a modality is scored `-inf`.
pub fn fit_reference(
    retrieved: &RetrievedSet,
    prior: &Dataset,
    config: &KnnGaussianConfig,
    seed: u64,
) -> Result<Option<KnnGaussianScorer>> {
    config.validate()?;
    if retrieved.is_empty() {
        return Ok(None);
    }
    let key_dim = match &config.lookup {
        LookupSpace::State => prior.state_dim(),
        LookupSpace::Modality(m) => {
            prior.modality_dim(m).ok_or_else(|| Error::Argument(format!("prior has no modality `{m}`")))?
        }
    };
    let mut keys = Vec::with_capacity(retrieved.total_frames * key_dim);
    let mut actions = Vec::with_capacity(retrieved.total_frames * prior.action_dim());
    let mut rows = 0;
    let mut seen = std::collections::HashSet::new();
    for m in &retrieved.matches {
        let t = prior.get(&m.prior_trajectory_id).ok_or_else(|| {
            Error::Incompatible(format!("retrieved trajectory `{}` is not in the prior dataset", m.prior_trajectory_id))
        })?;
        if m.start >= m.end || m.end > t.len() {
            return Err(Error::Incompatible(format!(
                "span [{}, {}) outside trajectory `{}` of {} frames",
                m.start,
                m.end,
                t.id,
                t.len()
            )));
        }
        for f in m.start..m.end {
            if config.deduplicate && !seen.insert((m.prior_trajectory_id.as_str(), f)) {
                continue;
            }
            let frame = t.frame(f);
            match &config.lookup {
                LookupSpace::State => keys.extend_from_slice(frame.state()),
                LookupSpace::Modality(name) => {
                    keys.extend_from_slice(frame.embedding(name).expect("modality checked against prior"))
                }
            }
            actions.extend_from_slice(frame.action());
            rows += 1;
        }
    }
    let mut keys = Matrix::from_vec(rows, key_dim, keys)?;
    let mut actions = Matrix::from_vec(rows, prior.action_dim(), actions)?;

    if let Some(cap) = config.max_reference_frames {
        if rows > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, rows, cap).into_vec();
            picked.sort_unstable();
            let pick = |m: &Matrix<f32>| {
                let rows: Vec<&[f32]> = picked.iter().map(|&i| m.row(i)).collect();
                Matrix::from_rows(&rows)
            };
            keys = pick(&keys)?;
            actions = pick(&actions)?;
        }
    }
    KnnGaussianScorer::new(keys, actions, config).map(Some)
}
