//! Per-modality similarity search over the prior dataset.

mod cost;
mod dtw;
mod language;
mod topk;

use serde::{Deserialize, Serialize};

use crate::segmenter::Segment;

pub(crate) use cost::squared_distance;
pub use cost::{cost_matrix, normalize_rows, CostMatrix, Metric};
pub use dtw::{dtw, sdtw, Alignment, SubsequenceAlignment};
pub use language::{allocate_frame_budget, cosine_similarity, retrieve_language, DEFAULT_LANGUAGE_THRESHOLD};
pub use topk::{retrieve_modality, retrieve_topk, TopK, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalOptions {
    pub metric: Metric,
    /// Scale each frame embedding to unit L2 norm before computing costs.
    pub normalize: bool,
}

/// One retrieved span of a prior trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub modality: String,
    /// Target span that produced this match.
    pub query: Segment,
    /// 0-based position among the matches of the same query.
    pub rank: usize,
    pub prior_trajectory_id: String,
    pub start: usize,
    pub end: usize,
    pub cost: f64,
    /// Instruction inherited from the source prior trajectory.
    pub instruction: String,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalKind {
    SubTrajectory,
    Language,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub modality: String,
    pub kind: RetrievalKind,
    pub matches: Vec<MatchResult>,
    pub total_frames: usize,
    /// Fewer than K prior trajectories were available for some query.
    pub exhausted: bool,
    pub warning: Option<String>,
}

impl RetrievedSet {
    pub fn new(modality: impl Into<String>, kind: RetrievalKind, matches: Vec<MatchResult>) -> Self {
        let total_frames = matches.iter().map(MatchResult::len).sum();
        Self { modality: modality.into(), kind, matches, total_frames, exhausted: false, warning: None }
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}
