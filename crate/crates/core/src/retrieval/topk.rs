use std::borrow::Cow;
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::matrix::Matrix;
use crate::segmenter::Segment;
use crate::trajstore::{Dataset, Trajectory};

use super::cost::{fill_costs, normalize_rows};
use super::dtw::sdtw_span_in_place;
use super::{MatchResult, RetrievalKind, RetrievalOptions, RetrievedSet};

pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub matches: Vec<MatchResult>,
    /// `k` exceeded the number of prior trajectories.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    prior: usize,
    cost: f64,
    start: usize,
    end: usize,
}

fn embedding_of<'a>(t: &'a Trajectory, modality: &str, role: &str) -> Result<&'a Matrix<f32>> {
    t.embedding(modality)
        .ok_or_else(|| Error::Argument(format!("modality `{modality}` missing from {role} trajectory `{}`", t.id)))
}

fn query_rows(target: &Dataset, segment: &Segment, modality: &str) -> Result<Matrix<f32>> {
    let t = target
        .get(&segment.trajectory_id)
        .ok_or_else(|| Error::Argument(format!("unknown target trajectory `{}`", segment.trajectory_id)))?;
    if segment.start >= segment.end || segment.end > t.len() {
        return Err(Error::Argument(format!(
            "segment [{}, {}) out of range for `{}` with {} frames",
            segment.start,
            segment.end,
            t.id,
            t.len()
        )));
    }
    Ok(embedding_of(t, modality, "target")?.slice_rows(segment.start, segment.end))
}

fn check_modality(target: &Dataset, prior: &Dataset, modality: &str) -> Result<usize> {
    match (target.modality_dim(modality), prior.modality_dim(modality)) {
        (Some(a), Some(b)) if a == b => Ok(a),
        (Some(a), Some(b)) => {
            Err(Error::Argument(format!("modality `{modality}` has dimension {a} in target but {b} in prior")))
        }
        _ => Err(Error::Argument(format!("modality `{modality}` is not present in both datasets"))),
    }
}

/// Ascending cost, then prior id, then span start.
fn rank_order(prior: &Dataset) -> impl Fn(&Candidate, &Candidate) -> Ordering + '_ {
    move |a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then_with(|| prior.trajectories()[a.prior].id.cmp(&prior.trajectories()[b.prior].id))
            .then(a.start.cmp(&b.start))
    }
}

struct Prepared<'a> {
    dim: usize,
    queries: Vec<Matrix<f32>>,
    priors: Vec<Cow<'a, Matrix<f32>>>,
}

fn prepare<'a>(
    target: &Dataset,
    segments: &[Segment],
    prior: &'a Dataset,
    modality: &str,
    options: &RetrievalOptions,
) -> Result<Prepared<'a>> {
    let dim = check_modality(target, prior, modality)?;
    let mut queries = Vec::with_capacity(segments.len());
    for s in segments {
        let q = query_rows(target, s, modality)?;
        queries.push(if options.normalize { normalize_rows(&q) } else { q });
    }
    let mut priors = Vec::with_capacity(prior.len());
    for t in prior.trajectories() {
        let e = embedding_of(t, modality, "prior")?;
        priors.push(if options.normalize { Cow::Owned(normalize_rows(e)) } else { Cow::Borrowed(e) });
    }
    Ok(Prepared { dim, queries, priors })
}

fn run(
    prepared: &Prepared<'_>,
    segments: &[Segment],
    prior: &Dataset,
    modality: &str,
    k: usize,
    options: &RetrievalOptions,
    exec: &Executor,
) -> Vec<TopK> {
    let m = prepared.priors.len();
    let scored = exec.map_range(segments.len() * m, |idx| {
        let (qi, pi) = (idx / m, idx % m);
        let q = &prepared.queries[qi];
        let p = &prepared.priors[pi];
        let mut buf = Vec::with_capacity(q.rows() * p.rows());
        fill_costs(q.as_slice(), p.as_slice(), prepared.dim, options.metric, &mut buf);
        let (cost, start, end) = sdtw_span_in_place(&mut buf, q.rows(), p.rows());
        Candidate { prior: pi, cost, start, end }
    });

    let order = rank_order(prior);
    segments
        .iter()
        .zip(scored.chunks(m.max(1)))
        .map(|(segment, chunk)| {
            let mut cands = chunk.to_vec();
            cands.sort_by(&order);
            cands.truncate(k);
            let matches = cands
                .iter()
                .enumerate()
                .map(|(rank, c)| {
                    let t = &prior.trajectories()[c.prior];
                    MatchResult {
                        modality: modality.to_string(),
                        query: segment.clone(),
                        rank,
                        prior_trajectory_id: t.id.clone(),
                        start: c.start,
                        end: c.end,
                        cost: c.cost,
                        instruction: t.instruction.clone(),
                    }
                })
                .collect();
            TopK { matches, exhausted: k > m }
        })
        .collect()
}

/// The `k` lowest-cost subsequence matches of one target segment, one per prior trajectory.
pub fn retrieve_topk(
    segment: &Segment,
    target: &Dataset,
    prior: &Dataset,
    modality: &str,
    k: usize,
    options: &RetrievalOptions,
    exec: &Executor,
) -> Result<TopK> {
    let segments = std::slice::from_ref(segment);
    let prepared = prepare(target, segments, prior, modality, options)?;
    Ok(run(&prepared, segments, prior, modality, k, options, exec).pop().expect("one segment in, one result out"))
}

/// Top-`k` for every segment, concatenated in segment order.
pub fn retrieve_modality(
    segments: &[Segment],
    target: &Dataset,
    prior: &Dataset,
    modality: &str,
    k: usize,
    options: &RetrievalOptions,
    exec: &Executor,
) -> Result<RetrievedSet> {
    let prepared = prepare(target, segments, prior, modality, options)?;
    let results = run(&prepared, segments, prior, modality, k, options, exec);
    let exhausted = results.iter().any(|r| r.exhausted);
    let mut set = RetrievedSet::new(
        modality,
        RetrievalKind::SubTrajectory,
        results.into_iter().flat_map(|r| r.matches).collect(),
    );
    set.exhausted = exhausted;
    if exhausted {
        set.warning = Some(format!("k={k} exceeds the {} prior trajectories; returned all", prior.len()));
    }
    Ok(set)
}
