//! Importance-sampled stream of fixed-length training windows.
//!
//! Every modality gets a pool made of its retrieved spans plus all target
//! demonstrations. A draw first picks a modality from the categorical
//! distribution given by the weights, then a window uniformly from that
//! modality's pool. One seeded generator owns all randomness.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::RetrievedSet;
use crate::trajstore::Dataset;
use crate::weighting::ModalityWeights;

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Target,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PoolSpan {
    trajectory_id: String,
    start: usize,
    end: usize,
    source: Source,
    instruction: String,
}

/// One sampleable window of `len` frames starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window<'a> {
    pub trajectory_id: &'a str,
    pub start: usize,
    pub len: usize,
    pub source: Source,
    pub instruction: &'a str,
}

/// All stride-1 windows of length `window` inside a modality's spans.
///
/// Windows are enumerated span by span in insertion order (retrieved spans
/// first, then target demonstrations); they are indexed, not materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub modality: String,
    pub window: usize,
    /// Frames inside all spans, including spans too short to hold a window.
    pub frame_total: usize,
    spans: Vec<PoolSpan>,
    /// `offsets[i]` is the index of the first window of `spans[i]`.
    offsets: Vec<usize>,
    units: usize,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.units
    }

    pub fn is_empty(&self) -> bool {
        self.units == 0
    }

    pub fn target_units(&self) -> usize {
        self.spans.iter().filter(|s| s.source == Source::Target).map(|s| windows_in(s.end - s.start, self.window)).sum()
    }

    pub fn unit(&self, index: usize) -> Window<'_> {
        assert!(index < self.units, "window {index} out of range");
        let span_idx = self.offsets.partition_point(|&o| o <= index) - 1;
        let s = &self.spans[span_idx];
        Window {
            trajectory_id: &s.trajectory_id,
            start: s.start + (index - self.offsets[span_idx]),
            len: self.window,
            source: s.source,
            instruction: &s.instruction,
        }
    }

    pub fn units(&self) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.units).map(move |i| self.unit(i))
    }
}

fn windows_in(span_len: usize, window: usize) -> usize {
    (span_len + 1).saturating_sub(window)
}

/// Pool for one modality: its retrieved spans plus every target demonstration.
pub fn build_augmented(retrieved: &RetrievedSet, target: &Dataset, window: usize) -> Result<AugmentedSet> {
    if window == 0 {
        return Err(Error::Argument("window length must be at least 1".into()));
    }
    let mut spans: Vec<PoolSpan> = retrieved
        .matches
        .iter()
        .map(|m| PoolSpan {
            trajectory_id: m.prior_trajectory_id.clone(),
            start: m.start,
            end: m.end,
            source: Source::Retrieved,
            instruction: m.instruction.clone(),
        })
        .collect();
    spans.extend(target.trajectories().iter().map(|t| PoolSpan {
        trajectory_id: t.id.clone(),
        start: 0,
        end: t.len(),
        source: Source::Target,
        instruction: t.instruction.clone(),
    }));

    let mut offsets = Vec::with_capacity(spans.len());
    let mut units = 0;
    let mut frame_total = 0;
    for s in &spans {
        offsets.push(units);
        units += windows_in(s.end - s.start, window);
        frame_total += s.end - s.start;
    }
    if units == 0 {
        return Err(Error::NoData(format!(
            "modality `{}` has no span of at least {window} frames",
            retrieved.modality
        )));
    }
    Ok(AugmentedSet { modality: retrieved.modality.clone(), window, frame_total, spans, offsets, units })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub batch: usize,
    pub modality: String,
    pub trajectory_id: String,
    pub start: usize,
    pub end: usize,
    pub source: Source,
    pub instruction: String,
}

/// Seeded i.i.d. stream; yields `num_batches` batches of `batch_size` records.
pub struct SampleStream<'a> {
    sets: Vec<&'a AugmentedSet>,
    choice: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    batch_size: usize,
    num_batches: usize,
    emitted: usize,
}

impl<'a> SampleStream<'a> {
    /// Next `(modality index, window index)` pair. Modality indices follow
    /// the name order of the weights.
    pub fn draw(&mut self) -> (usize, usize) {
        let m = self.choice.sample(&mut self.rng);
        let u = self.rng.random_range(0..self.sets[m].len());
        (m, u)
    }

    pub fn modalities(&self) -> Vec<&'a str> {
        self.sets.iter().map(|s| s.modality.as_str()).collect()
    }

    fn record(&mut self, batch: usize) -> SampleRecord {
        let (m, u) = self.draw();
        let set = self.sets[m];
        let w = set.unit(u);
        SampleRecord {
            batch,
            modality: set.modality.clone(),
            trajectory_id: w.trajectory_id.to_string(),
            start: w.start,
            end: w.start + w.len,
            source: w.source,
            instruction: w.instruction.to_string(),
        }
    }
}

impl Iterator for SampleStream<'_> {
    type Item = Vec<SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.emitted == self.num_batches {
            return None;
        }
        let batch = self.emitted;
        self.emitted += 1;
        Some((0..self.batch_size).map(|_| self.record(batch)).collect())
    }
}

pub fn sample_stream<'a>(
    augmented: &'a BTreeMap<String, AugmentedSet>,
    weights: &ModalityWeights,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
) -> Result<SampleStream<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut sets = Vec::with_capacity(weights.weights.len());
    let mut probs = Vec::with_capacity(weights.weights.len());
    for (m, &w) in &weights.weights {
        if !(w >= 0.0) {
            return Err(Error::Config(format!("weight of `{m}` is {w}")));
        }
        let set =
            augmented.get(m).ok_or_else(|| Error::Config(format!("weighted modality `{m}` has no augmented set")))?;
        if w > 0.0 && set.is_empty() {
            return Err(Error::Config(format!("modality `{m}` has weight {w} but no sampleable windows")));
        }
        sets.push(set);
        probs.push(w);
    }
    let choice = WeightedIndex::new(&probs).map_err(|e| Error::Config(format!("invalid modality weights: {e}")))?;
    Ok(SampleStream { sets, choice, rng: ChaCha8Rng::seed_from_u64(seed), batch_size, num_batches, emitted: 0 })
}

/// First line of an exported sample manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub weights: BTreeMap<String, f64>,
    pub config_hash: String,
    pub window: usize,
    pub batch_size: usize,
    pub num_batches: usize,
    pub uniform: bool,
}

/// Writes the header line followed by every record as JSON lines.
pub fn export_manifest<W: Write>(out: &mut W, header: &ManifestHeader, stream: SampleStream<'_>) -> Result<usize> {
    let io = |e| Error::io("sample manifest", e);
    let json = |e| Error::json("sample manifest", e);
    serde_json::to_writer(&mut *out, &serde_json::json!({ "header": header })).map_err(json)?;
    out.write_all(b"\n").map_err(io)?;
    let mut count = 0;
    for batch in stream {
        for r in batch {
            serde_json::to_writer(&mut *out, &r).map_err(json)?;
            out.write_all(b"\n").map_err(io)?;
            count += 1;
        }
    }
    Ok(count)
}
