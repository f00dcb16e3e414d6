//! Target and prior demonstration datasets.
//!
//! A dataset is a directory holding `manifest.json` plus one little-endian
//! `f32` record file per trajectory; see [`io`] for the byte layout.
//! Datasets are validated on construction and immutable afterwards.

mod io;
mod views;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use io::{load_dataset, write_dataset, MANIFEST_FILE};
pub use views::{average_view_matrices, average_views};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Prior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }
}

/// One demonstration. Per-frame arrays are stored column-wise by kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub instruction: String,
    pub instruction_embedding: Option<Vec<f32>>,
    /// End-effector X, Y, Z in meters.
    pub ee_positions: Vec<[f32; 3]>,
    pub states: Matrix<f32>,
    pub actions: Matrix<f32>,
    /// Keyed by modality name; each matrix is frames x d_f.
    pub embeddings: BTreeMap<String, Matrix<f32>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.ee_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ee_positions.is_empty()
    }

    pub fn frame(&self, index: usize) -> Frame<'_> {
        assert!(index < self.len(), "frame {index} out of range");
        Frame { trajectory: self, index }
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = Frame<'_>> + '_ {
        (0..self.len()).map(move |index| Frame { trajectory: self, index })
    }

    pub fn embedding(&self, modality: &str) -> Option<&Matrix<f32>> {
        self.embeddings.get(modality)
    }
}

/// Borrowed view of a single frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    trajectory: &'a Trajectory,
    index: usize,
}

impl<'a> Frame<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn state(&self) -> &'a [f32] {
        self.trajectory.states.row(self.index)
    }

    pub fn action(&self) -> &'a [f32] {
        self.trajectory.actions.row(self.index)
    }

    pub fn ee_position(&self) -> [f32; 3] {
        self.trajectory.ee_positions[self.index]
    }

    pub fn embedding(&self, modality: &str) -> Option<&'a [f32]> {
        self.trajectory.embeddings.get(modality).map(|m| m.row(self.index))
    }
}

/// Dataset-level metadata as stored in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub role: Role,
    pub action_dim: usize,
    pub state_dim: usize,
    pub language_dim: Option<usize>,
    pub modalities: Vec<ModalitySpec>,
    pub trajectory_count: usize,
    pub trajectories: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: usize,
    pub file: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    role: Role,
    action_dim: usize,
    state_dim: usize,
    language_dim: Option<usize>,
    modalities: Vec<ModalitySpec>,
    trajectories: Vec<Trajectory>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Validates every trajectory against the declared dimensions.
    pub fn new(
        role: Role,
        action_dim: usize,
        state_dim: usize,
        language_dim: Option<usize>,
        modalities: Vec<ModalitySpec>,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        if action_dim == 0 {
            return Err(Error::Argument("action_dim must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for m in &modalities {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Argument(format!("modality `{}` declared twice", m.name)));
            }
            if m.dim == 0 {
                return Err(Error::Argument(format!("modality `{}` has zero dimension", m.name)));
            }
        }

        let mut by_id = HashMap::with_capacity(trajectories.len());
        for (i, t) in trajectories.iter().enumerate() {
            validate_trajectory(t, action_dim, state_dim, language_dim, &modalities)?;
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(Error::validation(&t.id, "id", "duplicate trajectory id"));
            }
        }

        Ok(Self { role, action_dim, state_dim, language_dim, modalities, trajectories, by_id })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn language_dim(&self) -> Option<usize> {
        self.language_dim
    }

    pub fn modalities(&self) -> &[ModalitySpec] {
        &self.modalities
    }

    pub fn modality_dim(&self, name: &str) -> Option<usize> {
        self.modalities.iter().find(|m| m.name == name).map(|m| m.dim)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.by_id.get(id).map(|&i| &self.trajectories[i])
    }

    pub fn total_frames(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Manifest describing this dataset with canonical record file names.
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            role: self.role,
            action_dim: self.action_dim,
            state_dim: self.state_dim,
            language_dim: self.language_dim,
            modalities: self.modalities.clone(),
            trajectory_count: self.trajectories.len(),
            trajectories: self
                .trajectories
                .iter()
                .enumerate()
                .map(|(i, t)| ManifestEntry {
                    id: t.id.clone(),
                    frames: t.len(),
                    file: io::record_file_name(i),
                    instruction: t.instruction.clone(),
                })
                .collect(),
        }
    }
}

fn validate_trajectory(
    t: &Trajectory,
    action_dim: usize,
    state_dim: usize,
    language_dim: Option<usize>,
    modalities: &[ModalitySpec],
) -> Result<()> {
    let n = t.len();
    if n == 0 {
        return Err(Error::validation(&t.id, "frames", "trajectory has no frames"));
    }
    let check = |field: &str, m: &Matrix<f32>, cols: usize| -> Result<()> {
        if m.rows() != n {
            return Err(Error::validation(&t.id, field, format!("{} rows, expected {n} frames", m.rows())));
        }
        if m.cols() != cols {
            return Err(Error::validation(&t.id, field, format!("dimension {}, expected {cols}", m.cols())));
        }
        Ok(())
    };
    check("states", &t.states, state_dim)?;
    check("actions", &t.actions, action_dim)?;

    if t.embeddings.len() != modalities.len() {
        return Err(Error::validation(
            &t.id,
            "embeddings",
            format!("{} modalities present, manifest declares {}", t.embeddings.len(), modalities.len()),
        ));
    }
    for m in modalities {
        let emb = t
            .embeddings
            .get(&m.name)
            .ok_or_else(|| Error::validation(&t.id, format!("embeddings.{}", m.name), "modality missing"))?;
        check(&format!("embeddings.{}", m.name), emb, m.dim)?;
    }

    match (language_dim, &t.instruction_embedding) {
        (None, None) => {}
        (Some(d), Some(e)) if e.len() == d => {}
        (Some(d), Some(e)) => {
            return Err(Error::validation(
                &t.id,
                "instruction_embedding",
                format!("dimension {}, expected {d}", e.len()),
            ))
        }
        (Some(_), None) => {
            return Err(Error::validation(&t.id, "instruction_embedding", "missing but manifest declares language_dim"))
        }
        (None, Some(_)) => {
            return Err(Error::validation(
                &t.id,
                "instruction_embedding",
                "present but manifest declares no language_dim",
            ))
        }
    }
    Ok(())
}

/// Result of checking that a target and a prior dataset can be used together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairingReport {
    pub action_dim: usize,
    /// Modalities present in both with equal dimension; retrieval is limited to these.
    pub shared_modalities: Vec<String>,
    pub target_only: Vec<String>,
    pub prior_only: Vec<String>,
    /// Present in both but with different dimensions.
    pub dimension_mismatch: Vec<String>,
    pub language_compatible: bool,
}

impl PairingReport {
    pub fn is_shared(&self, modality: &str) -> bool {
        self.shared_modalities.iter().any(|m| m == modality)
    }
}

pub fn validate_pairing(target: &Dataset, prior: &Dataset) -> Result<PairingReport> {
    if target.action_dim() != prior.action_dim() {
        return Err(Error::Incompatible(format!(
            "target action_dim {} differs from prior action_dim {}",
            target.action_dim(),
            prior.action_dim()
        )));
    }
    let mut shared = Vec::new();
    let mut target_only = Vec::new();
    let mut mismatch = Vec::new();
    for m in target.modalities() {
        match prior.modality_dim(&m.name) {
            Some(d) if d == m.dim => shared.push(m.name.clone()),
            Some(_) => mismatch.push(m.name.clone()),
            None => target_only.push(m.name.clone()),
        }
    }
    let prior_only =
        prior.modalities().iter().filter(|m| target.modality_dim(&m.name).is_none()).map(|m| m.name.clone()).collect();
    let language_compatible = matches!(
        (target.language_dim(), prior.language_dim()),
        (Some(a), Some(b)) if a == b
    );
    Ok(PairingReport {
        action_dim: target.action_dim(),
        shared_modalities: shared,
        target_only,
        prior_only,
        dimension_mismatch: mismatch,
        language_compatible,
    })
}
