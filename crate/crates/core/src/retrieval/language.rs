use crate::error::{Error, Result};
use crate::segmenter::Segment;
use crate::trajstore::Dataset;

use super::{MatchResult, RetrievalKind, RetrievedSet};

pub const DEFAULT_LANGUAGE_THRESHOLD: f64 = 0.90;

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Splits `budget` frames over `count` demonstrations: `budget / count` each,
/// plus one extra frame for the first `budget % count` (the lowest-cost ones).
pub fn allocate_frame_budget(budget: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let (base, extra) = (budget / count, budget % count);
    (0..count).map(|i| base + usize::from(i < extra)).collect()
}

/// Whole-demonstration retrieval by instruction similarity.
///
/// A prior demonstration is kept when its cosine similarity to some target
/// instruction exceeds `threshold`. Kept demonstrations are ordered by
/// `1 - similarity` and truncated from their start to their share of
/// `frame_budget`; any that receive no frames are dropped.
pub fn retrieve_language(
    target: &Dataset,
    prior: &Dataset,
    threshold: f64,
    frame_budget: usize,
) -> Result<RetrievedSet> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!("language threshold must lie in (-1, 1], got {threshold}")));
    }
    if frame_budget == 0 {
        return Err(Error::Argument("frame budget must be at least 1".into()));
    }
    match (target.language_dim(), prior.language_dim()) {
        (Some(a), Some(b)) if a == b => {}
        _ => {
            return Err(Error::Argument(
                "language retrieval needs instruction embeddings of equal dimension in both datasets".into(),
            ))
        }
    }

    let mut selected = Vec::new();
    for p in prior.trajectories() {
        let pe = p.instruction_embedding.as_deref().unwrap_or_default();
        let mut best: Option<(f64, usize)> = None;
        for (ti, t) in target.trajectories().iter().enumerate() {
            let sim = cosine_similarity(t.instruction_embedding.as_deref().unwrap_or_default(), pe);
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, ti));
            }
        }
        if let Some((sim, ti)) = best {
            if sim > threshold {
                selected.push((1.0 - sim, p, ti));
            }
        }
    }
    selected.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let shares = allocate_frame_budget(frame_budget, selected.len());
    let matches: Vec<MatchResult> = selected
        .iter()
        .zip(shares)
        .filter(|(_, share)| *share > 0)
        .enumerate()
        .map(|(rank, ((cost, p, ti), share))| {
            let t = &target.trajectories()[*ti];
            MatchResult {
                modality: "language".into(),
                query: Segment { trajectory_id: t.id.clone(), start: 0, end: t.len() },
                rank,
                prior_trajectory_id: p.id.clone(),
                start: 0,
                end: p.len().min(share),
                cost: *cost,
                instruction: p.instruction.clone(),
            }
        })
        .collect();

    let mut set = RetrievedSet::new("language", RetrievalKind::Language, matches);
    if set.is_empty() {
        set.warning = Some(format!("no prior instruction exceeds similarity {threshold}"));
    }
    Ok(set)
}
