//! End-to-end orchestration: segment, retrieve, weigh, sample and evaluate,
//! writing one artifact per stage into an output directory.
//!
//! Artifacts are deterministic functions of the configuration (thread count
//! and output location excluded) and each one records the configuration hash.

mod artifacts;
mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::retrieval::{retrieve_language, retrieve_modality, RetrievedSet};
use crate::sampler::{build_augmented, export_manifest, sample_stream, AugmentedSet, ManifestHeader, SampleRecord};
use crate::segmenter::{segment_dataset, Segment};
use crate::synthbench::{evaluate, EvalReport, Labels};
use crate::trajstore::{load_dataset, validate_pairing, Dataset};
use crate::weighting::{
    fit_reference, score_modality, softmax_weights, CheckpointSchedule, ExternalScores, ModalityScore, ModalityWeights,
};

pub use artifacts::{
    read_retrieved, read_segments, read_weights, retrieved_file, sha256_file, ArtifactEntry, ArtifactWriter,
    RunManifest, WeightsArtifact, EVAL_FILE, RUN_MANIFEST_FILE, SAMPLES_FILE, SEGMENTS_FILE, WEIGHTS_FILE,
};
pub use config::{PipelineConfig, Preset, RetrievalSection, SamplerSection, ScorerSpec, WeightingSection};

/// Modality name of the instruction-similarity retrieved set.
pub const LANGUAGE_MODALITY: &str = "language";

/// JSON-lines stage log written to an arbitrary sink (stderr in the CLI).
pub struct StageLog<'a> {
    sink: &'a mut dyn Write,
}

impl<'a> StageLog<'a> {
    pub fn new(sink: &'a mut dyn Write) -> Self {
        Self { sink }
    }

    pub fn event(&mut self, value: serde_json::Value) {
        // Logging must never fail a run.
        let _ = serde_json::to_writer(&mut *self.sink, &value);
        let _ = self.sink.write_all(b"\n");
    }

    /// Runs `f` as stage `name`, logging its wall-clock time and outcome.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.event(json!({"event": "stage_start", "stage": name}));
        let t0 = Instant::now();
        let out = f();
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        match &out {
            Ok(_) => self.event(json!({"event": "stage_end", "stage": name, "status": "ok", "elapsed_ms": ms})),
            Err(e) => self.event(
                json!({"event": "stage_end", "stage": name, "status": "error", "elapsed_ms": ms, "error": e.to_string()}),
            ),
        }
        out.map_err(|e| e.in_stage(name))
    }
}

/// Loaded and cross-checked input datasets.
#[derive(Debug)]
pub struct Inputs {
    pub target: Dataset,
    pub prior: Dataset,
    /// Embedding modalities used for sub-trajectory retrieval.
    pub modalities: Vec<String>,
    pub language: bool,
}

pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let target = load_dataset(&config.target)?;
    let prior = load_dataset(&config.prior)?;
    let pairing = validate_pairing(&target, &prior)?;
    let modalities = match &config.modalities {
        Some(list) => {
            if let Some(bad) = list.iter().find(|m| !pairing.is_shared(m)) {
                return Err(Error::Config(format!(
                    "modalities: `{bad}` is not shared by target and prior (shared: {:?})",
                    pairing.shared_modalities
                )));
            }
            list.clone()
        }
        None => pairing.shared_modalities.clone(),
    };
    if modalities.is_empty() && !(config.retrieval.language && pairing.language_compatible) {
        return Err(Error::Incompatible("target and prior share no retrievable modality".into()));
    }
    Ok(Inputs { target, prior, modalities, language: config.retrieval.language && pairing.language_compatible })
}

pub fn run_segment(config: &PipelineConfig, target: &Dataset) -> Result<Vec<Segment>> {
    config.segmenter.validate()?;
    segment_dataset(target, &config.segmenter)
}

/// One retrieved set per embedding modality, then the language set if enabled.
pub fn run_retrieve(
    config: &PipelineConfig,
    inputs: &Inputs,
    segments: &[Segment],
    exec: &Executor,
) -> Result<Vec<RetrievedSet>> {
    let options = config.retrieval.options();
    let mut sets = Vec::with_capacity(inputs.modalities.len() + 1);
    for m in &inputs.modalities {
        sets.push(retrieve_modality(segments, &inputs.target, &inputs.prior, m, config.retrieval.k, &options, exec)?);
    }
    if inputs.language {
        let budget = config
            .retrieval
            .frame_budget
            .or_else(|| sets.first().map(|s| s.total_frames))
            .filter(|&b| b > 0)
            .unwrap_or_else(|| inputs.prior.total_frames());
        let mut set = retrieve_language(&inputs.target, &inputs.prior, config.retrieval.language_threshold, budget)?;
        set.modality = LANGUAGE_MODALITY.to_string();
        for m in &mut set.matches {
            m.modality = LANGUAGE_MODALITY.to_string();
        }
        sets.push(set);
    }
    Ok(sets)
}

/// Scores each retrieved set and turns the scores into sampling weights.
pub fn run_weigh(
    config: &PipelineConfig,
    target: &Dataset,
    prior: &Dataset,
    retrieved: &[RetrievedSet],
    exec: &Executor,
) -> Result<(Vec<ModalityScore>, ModalityWeights)> {
    let names: Vec<&str> = retrieved.iter().map(|s| s.modality.as_str()).collect();
    if config.weighting.uniform {
        return Ok((Vec::new(), ModalityWeights::uniform(&names)?));
    }
    let scores: Vec<ModalityScore> = match &config.weighting.scorer {
        ScorerSpec::KnnGaussian => {
            let knn = &config.weighting.knn;
            knn.validate()?;
            let schedule = CheckpointSchedule::later_half(knn.sweep().len());
            exec.map(retrieved, |set| -> Result<ModalityScore> {
                match fit_reference(set, prior, knn, config.weighting.seed)? {
                    Some(scorer) => score_modality(&set.modality, &scorer, target, &schedule),
                    None => Ok(ModalityScore::empty(&set.modality)),
                }
            })
            .into_iter()
            .collect::<Result<_>>()?
        }
        ScorerSpec::External(path) => {
            let external: BTreeMap<String, ModalityScore> =
                ExternalScores::load(path)?.scores().into_iter().map(|s| (s.modality.clone(), s)).collect();
            names
                .iter()
                .map(|m| {
                    external.get(*m).cloned().ok_or_else(|| {
                        Error::Config(format!("weighting.scorer: {} has no scores for modality `{m}`", path.display()))
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let by_name: BTreeMap<String, f64> = scores.iter().map(|s| (s.modality.clone(), s.score)).collect();
    let weights = softmax_weights(&by_name, config.weighting.temperature)?;
    Ok((scores, weights))
}

pub fn build_all_augmented(
    config: &PipelineConfig,
    target: &Dataset,
    retrieved: &[RetrievedSet],
) -> Result<BTreeMap<String, AugmentedSet>> {
    retrieved.iter().map(|s| Ok((s.modality.clone(), build_augmented(s, target, config.sampler.window)?))).collect()
}

/// Writes the sample manifest and returns the sampled records.
pub fn run_sample<W: Write>(
    config: &PipelineConfig,
    augmented: &BTreeMap<String, AugmentedSet>,
    weights: &ModalityWeights,
    config_hash: &str,
    out: &mut W,
) -> Result<Vec<SampleRecord>> {
    let s = &config.sampler;
    let header = ManifestHeader {
        seed: s.seed,
        weights: weights.weights.clone(),
        config_hash: config_hash.to_string(),
        window: s.window,
        batch_size: s.batch_size,
        num_batches: s.num_batches,
        uniform: config.weighting.uniform,
    };
    export_manifest(out, &header, sample_stream(augmented, weights, s.batch_size, s.num_batches, s.seed)?)?;
    Ok(sample_stream(augmented, weights, s.batch_size, s.num_batches, s.seed)?.flatten().collect())
}

/// Outputs of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub weights: ModalityWeights,
    pub report: Option<EvalReport>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Runs every stage. Artifacts of finished stages stay on disk when a later
/// stage fails; the run manifest then names the failed stage.
pub fn run_pipeline(config: &PipelineConfig, exec: &Executor, log: &mut StageLog<'_>) -> Result<RunSummary> {
    config.validate()?;
    let hash = config.config_hash();
    log.event(json!({"event": "run_start", "config_hash": hash, "threads": exec.threads()}));
    let mut art = ArtifactWriter::create(&config.output, &hash)?;
    let mut completed: Vec<String> = Vec::new();
    let result = run_stages(config, exec, log, &mut art, &mut completed);
    let failed = match &result {
        Err(Error::Stage { stage, source }) => Some((stage.clone(), source.to_string())),
        Err(e) => Some(("unknown".to_string(), e.to_string())),
        Ok(_) => None,
    };
    let manifest = RunManifest {
        config_hash: hash.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: BTreeMap::from([
            ("sampler".to_string(), config.sampler.seed),
            ("scorer".to_string(), config.weighting.seed),
        ]),
        config: config.hashed_view(),
        completed_stages: completed,
        failed_stage: failed.as_ref().map(|f| f.0.clone()),
        error: failed.map(|f| f.1),
        artifacts: art.entries().to_vec(),
    };
    art.write_json(RUN_MANIFEST_FILE, &manifest)?;
    let (weights, report) = result?;
    log.event(json!({"event": "run_end", "config_hash": hash}));
    Ok(RunSummary { config_hash: hash, weights, report, artifacts: art.entries().to_vec() })
}

fn run_stages(
    config: &PipelineConfig,
    exec: &Executor,
    log: &mut StageLog<'_>,
    art: &mut ArtifactWriter,
    completed: &mut Vec<String>,
) -> Result<(ModalityWeights, Option<EvalReport>)> {
    let mut done = |s: &str| completed.push(s.to_string());

    let inputs = log.stage("load", || load_inputs(config))?;
    done("load");

    let segments = log.stage("segment", || {
        let segs = run_segment(config, &inputs.target)?;
        art.write_segments(&segs)?;
        Ok(segs)
    })?;
    done("segment");

    let retrieved = log.stage("retrieve", || {
        let sets = run_retrieve(config, &inputs, &segments, exec)?;
        for s in &sets {
            art.write_retrieved(s)?;
        }
        Ok(sets)
    })?;
    done("retrieve");

    let weights = log.stage("weigh", || {
        let (scores, weights) = run_weigh(config, &inputs.target, &inputs.prior, &retrieved, exec)?;
        art.write_weights(&scores, &weights)?;
        Ok(weights)
    })?;
    done("weigh");

    let samples = log.stage("sample", || {
        let augmented = build_all_augmented(config, &inputs.target, &retrieved)?;
        let mut buf = Vec::new();
        let records = run_sample(config, &augmented, &weights, art.config_hash(), &mut buf)?;
        art.write_bytes(SAMPLES_FILE, &buf)?;
        Ok(records)
    })?;
    done("sample");

    let report = match &config.labels {
        Some(path) => {
            let report = log.stage("evaluate", || {
                let labels = Labels::load(path)?;
                let report = evaluate(&labels, &retrieved, &weights, Some(&samples));
                art.write_eval(&report)?;
                Ok(report)
            })?;
            done("evaluate");
            Some(report)
        }
        None => None,
    };
    Ok((weights, report))
}
