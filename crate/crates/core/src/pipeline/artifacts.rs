use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::retrieval::{MatchResult, RetrievalKind, RetrievedSet};
use crate::segmenter::Segment;
use crate::synthbench::EvalReport;
use crate::weighting::{ModalityScore, ModalityWeights};

pub const SEGMENTS_FILE: &str = "segments.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const EVAL_FILE: &str = "eval_report.json";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

pub fn retrieved_file(modality: &str) -> String {
    format!("retrieved/{modality}.jsonl")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: Value,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsArtifact {
    pub config_hash: String,
    pub scores: Vec<ModalityScore>,
    pub weights: ModalityWeights,
}

#[derive(Serialize, Deserialize)]
struct SegmentsArtifact {
    config_hash: String,
    segments: Vec<Segment>,
}

#[derive(Serialize)]
struct EvalArtifact<'a> {
    config_hash: &'a str,
    report: &'a EvalReport,
}

/// First line of a retrieved-set JSON-lines file; one `MatchResult` per line follows.
#[derive(Serialize, Deserialize)]
struct RetrievedHeader {
    config_hash: String,
    modality: String,
    kind: RetrievalKind,
    total_frames: usize,
    exhausted: bool,
    warning: Option<String>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes artifacts below one directory and remembers their content hashes.
pub struct ArtifactWriter {
    dir: PathBuf,
    config_hash: String,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn create(dir: impl Into<PathBuf>, config_hash: &str) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, config_hash: config_hash.to_string(), entries: Vec::new() })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ArtifactEntry { path: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(path)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(rel, e))?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_segments(&mut self, segments: &[Segment]) -> Result<PathBuf> {
        let a = SegmentsArtifact { config_hash: self.config_hash.clone(), segments: segments.to_vec() };
        self.write_json(SEGMENTS_FILE, &a)
    }

    pub fn write_retrieved(&mut self, set: &RetrievedSet) -> Result<PathBuf> {
        let rel = retrieved_file(&set.modality);
        let header = RetrievedHeader {
            config_hash: self.config_hash.clone(),
            modality: set.modality.clone(),
            kind: set.kind,
            total_frames: set.total_frames,
            exhausted: set.exhausted,
            warning: set.warning.clone(),
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| Error::json(&rel, e))?;
        out.push(b'\n');
        for m in &set.matches {
            serde_json::to_writer(&mut out, m).map_err(|e| Error::json(&rel, e))?;
            out.push(b'\n');
        }
        self.write_bytes(&rel, &out)
    }

    pub fn write_weights(&mut self, scores: &[ModalityScore], weights: &ModalityWeights) -> Result<PathBuf> {
        let a = WeightsArtifact {
            config_hash: self.config_hash.clone(),
            scores: scores.to_vec(),
            weights: weights.clone(),
        };
        self.write_json(WEIGHTS_FILE, &a)
    }

    pub fn write_eval(&mut self, report: &EvalReport) -> Result<PathBuf> {
        let hash = self.config_hash.clone();
        self.write_json(EVAL_FILE, &EvalArtifact { config_hash: &hash, report })
    }
}

fn format_err(path: &Path, detail: impl ToString) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.to_string() }
}

/// Returns the producing config hash and the segments.
pub fn read_segments(path: impl AsRef<Path>) -> Result<(String, Vec<Segment>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let a: SegmentsArtifact = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
    Ok((a.config_hash, a.segments))
}

pub fn read_retrieved(path: impl AsRef<Path>) -> Result<(String, RetrievedSet)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))?.map_err(|e| Error::io(path, e))?;
    let header: RetrievedHeader = serde_json::from_str(&first).map_err(|e| format_err(path, e))?;
    let mut matches = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let m: MatchResult =
            serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 2)))?;
        matches.push(m);
    }
    let mut set = RetrievedSet::new(header.modality, header.kind, matches);
    if set.total_frames != header.total_frames {
        return Err(format_err(
            path,
            format!("header declares {} frames, matches hold {}", header.total_frames, set.total_frames),
        ));
    }
    set.exhausted = header.exhausted;
    set.warning = header.warning;
    Ok((header.config_hash, set))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightsArtifact> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}
