//! Pause-based segmentation of target demonstrations.
//!
//! The speed proxy at frame `t` is the L1 norm of the end-effector displacement
//! from `t` to `t + 1`. Each maximal run of sub-threshold speeds starting at
//! transition `t` cuts the trajectory before frame `t`, so pause frames open the
//! following segment. Segments shorter than `min_length` are then folded into
//! their shorter neighbour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajstore::{Dataset, Trajectory};

/// Half-open frame span `[start, end)` of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub trajectory_id: String,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Speed threshold in meters per frame (summed absolute per-axis deltas).
    pub epsilon: f64,
    pub min_length: usize,
}

impl SegmenterConfig {
    pub const SIMULATION_EPSILON: f64 = 5e-3;
    pub const REAL_EPSILON: f64 = 2e-3;
    pub const DEFAULT_MIN_LENGTH: usize = 20;

    pub fn simulation() -> Self {
        Self { epsilon: Self::SIMULATION_EPSILON, min_length: Self::DEFAULT_MIN_LENGTH }
    }

    pub fn real() -> Self {
        Self { epsilon: Self::REAL_EPSILON, min_length: Self::DEFAULT_MIN_LENGTH }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Argument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.min_length == 0 {
            return Err(Error::Argument("min_length must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

/// `v[t] = |dx| + |dy| + |dz|` between frames `t` and `t + 1`.
pub fn velocity_profile(ee_positions: &[[f32; 3]]) -> Result<Vec<f64>> {
    if ee_positions.len() < 2 {
        return Err(Error::Argument(format!(
            "velocity profile needs at least 2 positions, got {}",
            ee_positions.len()
        )));
    }
    Ok(ee_positions.windows(2).map(|w| (0..3).map(|k| (w[1][k] as f64 - w[0][k] as f64).abs()).sum()).collect())
}

/// Segment end indices before merging: one per maximal sub-threshold run,
/// placed at the run's first frame. A run starting at frame 0 produces no cut.
pub fn pause_cuts(velocities: &[f64], epsilon: f64) -> Vec<usize> {
    let mut cuts = Vec::new();
    let mut in_run = false;
    for (t, &v) in velocities.iter().enumerate() {
        let paused = v < epsilon;
        if paused && !in_run && t > 0 {
            cuts.push(t);
        }
        in_run = paused;
    }
    cuts
}

/// Segments `[0, n)` from explicit end-effector positions.
pub fn segment_positions(
    trajectory_id: &str,
    ee_positions: &[[f32; 3]],
    config: &SegmenterConfig,
) -> Result<Vec<Segment>> {
    config.validate()?;
    let n = ee_positions.len();
    if n == 0 {
        return Err(Error::Argument(format!("trajectory `{trajectory_id}` is empty")));
    }
    let mut bounds = vec![0];
    if n >= 2 {
        bounds.extend(pause_cuts(&velocity_profile(ee_positions)?, config.epsilon));
    }
    bounds.push(n);
    let lengths = merge_short(bounds.windows(2).map(|w| w[1] - w[0]).collect(), config.min_length);
    let mut start = 0;
    Ok(lengths
        .into_iter()
        .map(|len| {
            let s = Segment { trajectory_id: trajectory_id.to_string(), start, end: start + len };
            start += len;
            s
        })
        .collect())
}

pub fn segment(trajectory: &Trajectory, config: &SegmenterConfig) -> Result<Vec<Segment>> {
    segment_positions(&trajectory.id, &trajectory.ee_positions, config)
}

/// Segments every trajectory of `dataset` in dataset order.
pub fn segment_dataset(dataset: &Dataset, config: &SegmenterConfig) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for t in dataset.trajectories() {
        out.extend(segment(t, config)?);
    }
    Ok(out)
}

/// Repeatedly folds the shortest too-short piece (leftmost on ties) into its
/// shorter neighbour (left on ties) until every piece reaches `min_length`
/// or a single piece remains.
fn merge_short(mut lengths: Vec<usize>, min_length: usize) -> Vec<usize> {
    while lengths.len() > 1 {
        let Some((i, _)) = lengths.iter().enumerate().filter(|(_, &l)| l < min_length).min_by_key(|(i, &l)| (l, *i))
        else {
            break;
        };
        let target = match (i.checked_sub(1), lengths.get(i + 1)) {
            (Some(left), Some(&right_len)) if right_len < lengths[left] => i + 1,
            (Some(left), _) => left,
            (None, _) => i + 1,
        };
        let len = lengths.remove(i);
        let target = if target > i { target - 1 } else { target };
        lengths[target] += len;
    }
    lengths
}
