//! Synthetic multi-task demonstration worlds with known task labels.
//!
//! All tasks share one end-effector motion prototype (with per-demonstration
//! jitter and a held pause at each internal waypoint), so trajectories look
//! alike in state space while their actions follow task-specific linear maps.
//! Each embedding modality places every task around its own cluster centre;
//! an uninformative modality uses one centre for all tasks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::retrieval::RetrievedSet;
use crate::sampler::SampleRecord;
use crate::trajstore::{Dataset, ModalitySpec, Role, Trajectory};
use crate::weighting::ModalityWeights;

pub const LABELS_FILE: &str = "labels.json";
const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    pub informative: bool,
}

impl SynthModality {
    pub fn new(name: impl Into<String>, dim: usize, informative: bool) -> Self {
        Self { name: name.into(), dim, informative }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_tasks: usize,
    /// Prior demonstrations generated for every task.
    pub trajectories_per_task: usize,
    pub target_demos: usize,
    pub target_task: usize,
    pub phases: usize,
    /// Inclusive range of moving frames per phase.
    pub phase_frames: (usize, usize),
    /// Inclusive range of held frames at each internal waypoint.
    pub pause_frames: (usize, usize),
    pub modalities: Vec<SynthModality>,
    pub language_dim: Option<usize>,
    /// Distance between task centres in units of `noise_std`.
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub action_dim: usize,
    pub action_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            trajectories_per_task: 60,
            target_demos: 5,
            target_task: 0,
            phases: 3,
            phase_frames: (25, 40),
            pause_frames: (3, 5),
            modalities: vec![SynthModality::new("visual", 16, true), SynthModality::new("motion", 16, false)],
            language_dim: Some(16),
            cluster_separation: 10.0,
            noise_std: 1.0,
            action_dim: 2,
            action_noise: 0.01,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_tasks < 2 {
            return bad("num_tasks must be at least 2");
        }
        if self.target_task >= self.num_tasks {
            return bad("target_task out of range");
        }
        if self.trajectories_per_task == 0 || self.target_demos == 0 {
            return bad("trajectories_per_task and target_demos must be positive");
        }
        if self.phases == 0 || self.phase_frames.0 < 2 || self.phase_frames.0 > self.phase_frames.1 {
            return bad("phase_frames must be an increasing range starting at 2 or more");
        }
        if self.pause_frames.0 > self.pause_frames.1 {
            return bad("pause_frames must be an increasing range");
        }
        if !(self.cluster_separation >= 0.0) || !(self.noise_std > 0.0) || !(self.action_noise >= 0.0) {
            return bad("cluster_separation and action_noise must be non-negative, noise_std positive");
        }
        if self.modalities.is_empty() || self.modalities.iter().any(|m| m.dim == 0) {
            return bad("need at least one modality with positive dimension");
        }
        if self.action_dim == 0 {
            return bad("action_dim must be positive");
        }
        Ok(())
    }
}

/// Ground-truth task of every generated trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub target_task: usize,
    pub prior: BTreeMap<String, usize>,
}

impl Labels {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), detail: e.to_string() })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json("labels", e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub target: Dataset,
    pub prior: Dataset,
    pub labels: Labels,
}

struct TaskModel {
    action_map: Matrix<f64>,
    action_bias: Vec<f64>,
    language: Vec<f64>,
}

struct ModalityModel {
    /// One centre per task.
    centres: Vec<Vec<f64>>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn waypoints(rng: &mut ChaCha8Rng, count: usize) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = vec![[rng.random(), rng.random(), rng.random()]];
    while pts.len() < count {
        let p: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let last = pts.last().expect("non-empty");
        let l1: f64 = (0..3).map(|k| (p[k] - last[k]).abs()).sum();
        if l1 >= 0.6 {
            pts.push(p);
        }
    }
    pts
}

/// `count` points in `dim` dimensions, every pair exactly `distance` apart
/// when `dim >= count` (a randomly rotated regular simplex). In fewer
/// dimensions the points are Gaussian with that expected pairwise distance.
fn task_centres(rng: &mut ChaCha8Rng, count: usize, dim: usize, distance: f64) -> Vec<Vec<f64>> {
    if dim < count {
        let s = distance / (2.0 * dim as f64).sqrt();
        return (0..count).map(|_| gaussian_vec(rng, dim, s)).collect();
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    // Orthonormal points are sqrt(2) apart.
    let scale = distance / std::f64::consts::SQRT_2;
    basis.into_iter().map(|b| b.into_iter().map(|x| x * scale).collect()).collect()
}

struct Generator<'a> {
    cfg: &'a WorldConfig,
    prototype: Vec<[f64; 3]>,
    tasks: Vec<TaskModel>,
    modalities: Vec<ModalityModel>,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a WorldConfig, rng: &mut ChaCha8Rng) -> Self {
        let prototype = waypoints(rng, cfg.phases + 1);
        let tasks = (0..cfg.num_tasks)
            .map(|_| {
                let lang_dim = cfg.language_dim.unwrap_or(0);
                let mut language = gaussian_vec(rng, lang_dim, 1.0);
                let norm = language.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                language.iter_mut().for_each(|x| *x /= norm);
                TaskModel {
                    action_map: Matrix::from_vec(
                        cfg.action_dim,
                        STATE_DIM,
                        gaussian_vec(rng, cfg.action_dim * STATE_DIM, 1.0),
                    )
                    .expect("shape"),
                    action_bias: gaussian_vec(rng, cfg.action_dim, 1.0),
                    language,
                }
            })
            .collect();
        let modalities = cfg
            .modalities
            .iter()
            .map(|m| {
                let centres = if m.informative {
                    task_centres(rng, cfg.num_tasks, m.dim, cfg.cluster_separation * cfg.noise_std)
                } else {
                    let shared = task_centres(rng, 1, m.dim, 0.0).remove(0);
                    vec![shared; cfg.num_tasks]
                };
                ModalityModel {
                    centres,
                    freq: (0..m.dim).map(|_| rng.random_range(0.5..2.0)).collect(),
                    phase: (0..m.dim).map(|_| rng.random()).collect(),
                }
            })
            .collect();
        Self { cfg, prototype, tasks, modalities }
    }

    fn positions(&self, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let jitter = Normal::new(0.0, 0.02).expect("std");
        let hold = Normal::new(0.0, 1e-4).expect("std");
        let wps: Vec<[f64; 3]> = self
            .prototype
            .iter()
            .map(|p| [p[0] + jitter.sample(rng), p[1] + jitter.sample(rng), p[2] + jitter.sample(rng)])
            .collect();
        let mut out = Vec::new();
        for i in 0..self.cfg.phases {
            let (a, b) = (wps[i], wps[i + 1]);
            let len = rng.random_range(self.cfg.phase_frames.0..=self.cfg.phase_frames.1);
            for t in 0..len {
                let u = t as f64 / len as f64;
                out.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])]);
            }
            if i + 1 < self.cfg.phases {
                let pause = rng.random_range(self.cfg.pause_frames.0..=self.cfg.pause_frames.1);
                for _ in 0..pause {
                    out.push([b[0] + hold.sample(rng), b[1] + hold.sample(rng), b[2] + hold.sample(rng)]);
                }
            }
        }
        out.push(wps[self.cfg.phases]);
        out
    }

    fn trajectory(&self, rng: &mut ChaCha8Rng, id: String, task: usize) -> Trajectory {
        let pos = self.positions(rng);
        let n = pos.len();
        let tm = &self.tasks[task];
        let act_noise = Normal::new(0.0, self.cfg.action_noise.max(f64::MIN_POSITIVE)).expect("std");
        let emb_noise = Normal::new(0.0, self.cfg.noise_std).expect("std");

        let mut states = Matrix::zeros(n, STATE_DIM);
        let mut actions = Matrix::zeros(n, self.cfg.action_dim);
        for (f, p) in pos.iter().enumerate() {
            let progress = if n > 1 { f as f64 / (n - 1) as f64 } else { 0.0 };
            let s = [p[0], p[1], p[2], progress];
            for (k, v) in s.iter().enumerate() {
                states.set(f, k, *v as f32);
            }
            for a in 0..self.cfg.action_dim {
                let mean: f64 = (0..STATE_DIM).map(|k| tm.action_map.get(a, k) * s[k]).sum::<f64>() + tm.action_bias[a];
                let noise = if self.cfg.action_noise > 0.0 { act_noise.sample(rng) } else { 0.0 };
                actions.set(f, a, (mean + noise) as f32);
            }
        }

        let mut embeddings = BTreeMap::new();
        for (spec, model) in self.cfg.modalities.iter().zip(&self.modalities) {
            let mut m = Matrix::zeros(n, spec.dim);
            for f in 0..n {
                let progress = if n > 1 { f as f64 / (n - 1) as f64 } else { 0.0 };
                for d in 0..spec.dim {
                    let temporal = self.cfg.noise_std
                        * (std::f64::consts::TAU * (model.freq[d] * progress + model.phase[d])).sin();
                    let v = model.centres[task][d] + temporal + emb_noise.sample(rng);
                    m.set(f, d, v as f32);
                }
            }
            embeddings.insert(spec.name.clone(), m);
        }

        let instruction_embedding = self.cfg.language_dim.map(|_| {
            tm.language.iter().map(|x| (x + 0.02 * emb_noise.sample(rng) / self.cfg.noise_std) as f32).collect()
        });

        Trajectory {
            id,
            instruction: format!("complete task {task}"),
            instruction_embedding,
            ee_positions: pos.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect(),
            states,
            actions,
            embeddings,
        }
    }
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gen = Generator::new(config, &mut rng);
    let specs: Vec<ModalitySpec> = config.modalities.iter().map(|m| ModalitySpec::new(&m.name, m.dim)).collect();

    let target_trajs = (0..config.target_demos)
        .map(|i| gen.trajectory(&mut rng, format!("target-{i:03}"), config.target_task))
        .collect();
    let mut prior_trajs = Vec::with_capacity(config.num_tasks * config.trajectories_per_task);
    let mut prior_labels = BTreeMap::new();
    for task in 0..config.num_tasks {
        for i in 0..config.trajectories_per_task {
            let id = format!("prior-t{task:02}-{i:04}");
            prior_labels.insert(id.clone(), task);
            prior_trajs.push(gen.trajectory(&mut rng, id, task));
        }
    }

    let target =
        Dataset::new(Role::Target, config.action_dim, STATE_DIM, config.language_dim, specs.clone(), target_trajs)?;
    let prior = Dataset::new(Role::Prior, config.action_dim, STATE_DIM, config.language_dim, specs, prior_trajs)?;
    Ok(World { target, prior, labels: Labels { target_task: config.target_task, prior: prior_labels } })
}

/// Fraction of retrieved frames whose source trajectory belongs to the target task.
/// An empty set scores 0.
pub fn retrieval_precision(set: &RetrievedSet, labels: &Labels) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for m in &set.matches {
        total += m.len();
        if labels.prior.get(&m.prior_trajectory_id) == Some(&labels.target_task) {
            hit += m.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerCheck {
    pub draws: usize,
    pub frequencies: BTreeMap<String, f64>,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
    pub most_precise: Option<String>,
    pub highest_weight: Option<String>,
    /// The highest-weighted modality is also the most label-precise one.
    pub weight_ranking_correct: bool,
    pub sampler: Option<SamplerCheck>,
}

fn argmax(map: &BTreeMap<String, f64>) -> Option<String> {
    map.iter()
        .fold(None::<(&String, f64)>, |best, (k, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k.clone())
}

pub fn evaluate(
    labels: &Labels,
    retrieved: &[RetrievedSet],
    weights: &ModalityWeights,
    samples: Option<&[SampleRecord]>,
) -> EvalReport {
    let precision: BTreeMap<String, f64> =
        retrieved.iter().map(|s| (s.modality.clone(), retrieval_precision(s, labels))).collect();
    let most_precise = argmax(&precision);
    let highest_weight = weights.argmax().map(str::to_string);
    let sampler = samples.filter(|s| !s.is_empty()).map(|s| {
        let mut counts: BTreeMap<String, usize> = weights.weights.keys().map(|k| (k.clone(), 0)).collect();
        for r in s {
            *counts.entry(r.modality.clone()).or_default() += 1;
        }
        let frequencies: BTreeMap<String, f64> =
            counts.into_iter().map(|(k, c)| (k, c as f64 / s.len() as f64)).collect();
        let max_abs_deviation = frequencies.iter().map(|(k, f)| (f - weights.get(k)).abs()).fold(0.0, f64::max);
        SamplerCheck { draws: s.len(), frequencies, max_abs_deviation }
    });
    EvalReport {
        weight_ranking_correct: most_precise.is_some() && most_precise == highest_weight,
        precision,
        weights: weights.weights.clone(),
        most_precise,
        highest_weight,
        sampler,
    }
}
