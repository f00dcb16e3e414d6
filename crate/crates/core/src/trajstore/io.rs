//! On-disk dataset layout.
//!
//! `manifest.json` lists the trajectories; each record file holds, with no
//! padding and as little-endian `f32`:
//!
//! ```text
//! ee_positions   frames x 3
//! states         frames x state_dim
//! actions        frames x action_dim
//! <modality>     frames x d_f        (one block per modality, manifest order)
//! instruction    language_dim        (only when the manifest declares it)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{Dataset, DatasetManifest, ModalitySpec, Trajectory};

pub const MANIFEST_FILE: &str = "manifest.json";

pub(super) fn record_file_name(index: usize) -> String {
    format!("{index:06}.bin")
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Format { path: dir.to_path_buf(), detail: format!("missing {MANIFEST_FILE}") });
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format { path: manifest_path.clone(), detail: e.to_string() })?;
    if manifest.trajectory_count != manifest.trajectories.len() {
        return Err(Error::Format {
            path: manifest_path,
            detail: format!(
                "trajectory_count is {} but {} entries are listed",
                manifest.trajectory_count,
                manifest.trajectories.len()
            ),
        });
    }

    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = BlockReader { path: &path, trajectory: &entry.id, bytes: &bytes, offset: 0 };
        let n = entry.frames;
        if n == 0 {
            return Err(Error::validation(&entry.id, "frames", "trajectory has no frames"));
        }
        let ee = reader.block(n, 3)?;
        let ee_positions = ee.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
        let states = Matrix::from_vec(n, manifest.state_dim, reader.block(n, manifest.state_dim)?)?;
        let actions = Matrix::from_vec(n, manifest.action_dim, reader.block(n, manifest.action_dim)?)?;
        let mut embeddings = BTreeMap::new();
        for ModalitySpec { name, dim } in &manifest.modalities {
            embeddings.insert(name.clone(), Matrix::from_vec(n, *dim, reader.block(n, *dim)?)?);
        }
        let instruction_embedding = match manifest.language_dim {
            Some(d) => Some(reader.block(1, d)?),
            None => None,
        };
        if reader.offset != bytes.len() {
            return Err(Error::validation(
                &entry.id,
                "record",
                format!(
                    "{} trailing bytes after offset {} in {}",
                    bytes.len() - reader.offset,
                    reader.offset,
                    path.display()
                ),
            ));
        }
        trajectories.push(Trajectory {
            id: entry.id.clone(),
            instruction: entry.instruction.clone(),
            instruction_embedding,
            ee_positions,
            states,
            actions,
            embeddings,
        });
    }

    Dataset::new(
        manifest.role,
        manifest.action_dim,
        manifest.state_dim,
        manifest.language_dim,
        manifest.modalities,
        trajectories,
    )
}

/// Writes the canonical serialization of `dataset` into `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dataset.manifest();
    for (t, entry) in dataset.trajectories().iter().zip(&manifest.trajectories) {
        let mut buf = Vec::with_capacity(t.len() * 4 * 16);
        for p in &t.ee_positions {
            put(&mut buf, p);
        }
        put(&mut buf, t.states.as_slice());
        put(&mut buf, t.actions.as_slice());
        for m in dataset.modalities() {
            put(&mut buf, t.embeddings[&m.name].as_slice());
        }
        if let Some(e) = &t.instruction_embedding {
            put(&mut buf, e);
        }
        let path = dir.join(&entry.file);
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn put(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct BlockReader<'a> {
    path: &'a PathBuf,
    trajectory: &'a str,
    bytes: &'a [u8],
    offset: usize,
}

impl BlockReader<'_> {
    fn block(&mut self, rows: usize, cols: usize) -> Result<Vec<f32>> {
        let len = rows * cols * 4;
        let end = self.offset + len;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                trajectory: self.trajectory.to_string(),
                offset: self.bytes.len() as u64,
                expected: (end - self.bytes.len()) as u64,
            });
        }
        let out = self.bytes[self.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.offset = end;
        Ok(out)
    }
}
