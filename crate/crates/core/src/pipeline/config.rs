use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::retrieval::{Metric, RetrievalOptions, DEFAULT_K, DEFAULT_LANGUAGE_THRESHOLD};
use crate::sampler::DEFAULT_WINDOW;
use crate::segmenter::SegmenterConfig;
use crate::weighting::{KnnGaussianConfig, REAL_TEMPERATURE, SIMULATION_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Sim,
    Real,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" | "simulation" => Ok(Preset::Sim),
            "real" => Ok(Preset::Real),
            other => Err(Error::Config(format!("preset: unknown value `{other}` (expected sim or real)"))),
        }
    }
}

/// Which reference scorer produces modality scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    KnnGaussian,
    /// Pre-computed per-checkpoint scores read from a JSON file.
    External(PathBuf),
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "knn-gaussian" {
            Ok(ScorerSpec::KnnGaussian)
        } else if let Some(path) = s.strip_prefix("external:") {
            Ok(ScorerSpec::External(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!(
                "weighting.scorer: unknown scorer `{s}` (expected knn-gaussian or external:<path>)"
            )))
        }
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScorerSpec> for String {
    fn from(s: ScorerSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::KnnGaussian => f.write_str("knn-gaussian"),
            ScorerSpec::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    pub metric: Metric,
    pub normalize: bool,
    /// Add an instruction-similarity retrieved set when both datasets carry instruction embeddings.
    pub language: bool,
    pub language_threshold: f64,
    /// Frames shared out over language matches; defaults to the size of the first embedding modality's set.
    pub frame_budget: Option<usize>,
}

impl RetrievalSection {
    pub fn options(&self) -> RetrievalOptions {
        RetrievalOptions { metric: self.metric, normalize: self.normalize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingSection {
    pub temperature: f64,
    pub scorer: ScorerSpec,
    pub knn: KnnGaussianConfig,
    /// Ignore scores and weight every modality equally.
    pub uniform: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub window: usize,
    pub batch_size: usize,
    pub num_batches: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub target: PathBuf,
    pub prior: PathBuf,
    /// Ground-truth task labels; enables the evaluation stage.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub output: PathBuf,
    /// Embedding modalities to retrieve with; all shared ones when absent.
    #[serde(default)]
    pub modalities: Option<Vec<String>>,
    pub segmenter: SegmenterConfig,
    pub retrieval: RetrievalSection,
    pub weighting: WeightingSection,
    pub sampler: SamplerSection,
    /// Worker threads; 0 uses every core. Never affects results.
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Keys excluded from the configuration hash: they do not change any artifact content.
const UNHASHED: [&str; 2] = ["output", "threads"];

impl PipelineConfig {
    pub fn preset(
        preset: Preset,
        target: impl Into<PathBuf>,
        prior: impl Into<PathBuf>,
        output: impl Into<PathBuf>,
    ) -> Self {
        let (segmenter, temperature) = match preset {
            Preset::Sim => (SegmenterConfig::simulation(), SIMULATION_TEMPERATURE),
            Preset::Real => (SegmenterConfig::real(), REAL_TEMPERATURE),
        };
        Self {
            preset,
            target: target.into(),
            prior: prior.into(),
            labels: None,
            output: output.into(),
            modalities: None,
            segmenter,
            retrieval: RetrievalSection {
                k: DEFAULT_K,
                metric: Metric::L2,
                normalize: false,
                language: true,
                language_threshold: DEFAULT_LANGUAGE_THRESHOLD,
                frame_budget: None,
            },
            weighting: WeightingSection {
                temperature,
                scorer: ScorerSpec::KnnGaussian,
                knn: KnnGaussianConfig::default(),
                uniform: false,
                seed: 0,
            },
            sampler: SamplerSection { window: DEFAULT_WINDOW, batch_size: 32, num_batches: 100, seed: 0 },
            threads: None,
        }
    }

    /// Parses a JSON document: `preset` (default `sim`) supplies every value
    /// the document leaves out; nested sections merge key by key.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(ref map) = user else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let preset = match map.get("preset") {
            None => Preset::Sim,
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("preset: expected a string, got {other}"))),
        };
        let mut base = serde_json::to_value(Self::preset(preset, "", "", "")).map_err(|e| Error::json("config", e))?;
        if let Value::Object(b) = &mut base {
            for key in ["target", "prior", "output"] {
                b.remove(key);
            }
        }
        merge(&mut base, user);
        serde_json::from_value(base).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every field, reporting all problems at once as `field: reason` lines.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, field: &str, why: String| {
            if !ok {
                problems.push(format!("{field}: {why}"));
            }
        };
        for (field, path) in [("target", &self.target), ("prior", &self.prior)] {
            check(path.is_dir(), field, format!("dataset directory {} does not exist", path.display()));
        }
        if let Some(p) = &self.labels {
            check(p.is_file(), "labels", format!("file {} does not exist", p.display()));
        }
        if let ScorerSpec::External(p) = &self.weighting.scorer {
            check(p.is_file(), "weighting.scorer", format!("file {} does not exist", p.display()));
        }
        if let Some(m) = &self.modalities {
            check(!m.is_empty(), "modalities", "must not be empty".into());
        }
        let eps = self.segmenter.epsilon;
        check(eps > 0.0 && eps.is_finite(), "segmenter.epsilon", format!("must be positive, got {eps}"));
        check(self.segmenter.min_length >= 1, "segmenter.min_length", "must be at least 1".into());
        check(self.retrieval.k >= 1, "retrieval.k", "must be at least 1".into());
        let th = self.retrieval.language_threshold;
        check(th > -1.0 && th <= 1.0, "retrieval.language_threshold", format!("must lie in (-1, 1], got {th}"));
        check(self.retrieval.frame_budget != Some(0), "retrieval.frame_budget", "must be at least 1".into());
        let tau = self.weighting.temperature;
        check(tau > 0.0 && tau.is_finite(), "weighting.temperature", format!("must be positive, got {tau}"));
        if let Err(e) = self.weighting.knn.validate() {
            check(false, "weighting.knn", e.to_string());
        }
        check(self.sampler.window >= 1, "sampler.window", "must be at least 1".into());
        check(self.sampler.batch_size >= 1, "sampler.batch_size", "must be at least 1".into());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid configuration:\n  {}", problems.join("\n  "))))
        }
    }

    /// Everything that determines artifact content, as a JSON value.
    pub fn hashed_view(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for key in UNHASHED {
                m.remove(key);
            }
        }
        v
    }

    /// Hex SHA-256 of the canonical JSON of [`Self::hashed_view`].
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(&self.hashed_view()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
