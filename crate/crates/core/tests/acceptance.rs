//! Acceptance checks. Run with `cargo test -p demofuse --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use demofuse::pipeline::{
    run_pipeline, run_retrieve, run_segment, run_weigh, Inputs, PipelineConfig, Preset, StageLog,
};
use demofuse::retrieval::{
    dtw, retrieve_modality, sdtw, CostMatrix, MatchResult, Metric, RetrievalKind, RetrievalOptions, RetrievedSet,
};
use demofuse::sampler::{build_augmented, sample_stream, AugmentedSet};
use demofuse::segmenter::{segment_positions, Segment, SegmenterConfig};
use demofuse::synthbench::{evaluate, generate_world, retrieval_precision, WorldConfig, LABELS_FILE};
use demofuse::trajstore::{load_dataset, write_dataset, Dataset, ModalitySpec, Role, Trajectory};
use demofuse::weighting::{softmax_weights, ModalityWeights};
use demofuse::{Executor, Matrix};

type Check = fn() -> Result<String, String>;
/// Name, per-step displacements, configuration and expected `(start, end)` segments.
type Profile = (&'static str, Vec<f32>, SegmenterConfig, Vec<(usize, usize)>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

// Independent reference implementations.

/// Cumulative DTW over `c[.][s..e]`, summing along the path from its start.
fn oracle_dtw(c: &[Vec<f64>], s: usize, e: usize) -> f64 {
    let (n, m) = (c.len(), e - s);
    let mut d = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let here = c[i][s + j];
            d[i][j] = if i == 0 && j == 0 {
                here
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(d[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(d[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(d[i - 1][j - 1]);
                }
                best + here
            };
        }
    }
    d[n - 1][m - 1]
}

fn oracle_sdtw(c: &[Vec<f64>]) -> f64 {
    let m = c[0].len();
    let mut best = f64::INFINITY;
    for s in 0..m {
        for e in s + 1..=m {
            best = best.min(oracle_dtw(c, s, e));
        }
    }
    best
}

fn random_costs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=5);
    let m = rng.random_range(1..=10);
    (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect()
}

const CORPUS: usize = 2000;

fn sdtw_oracle_equivalence() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..CORPUS {
        let c = random_costs(&mut rng);
        let got = sdtw(&CostMatrix::from_rows(&c).unwrap()).value;
        let want = oracle_sdtw(&c);
        ensure(got == want, || format!("case {case}: sdtw {got} != brute force {want}"))?;
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {}", secs(elapsed)))?;
    Ok(format!("{CORPUS} random matrices equal brute force exactly in {}", secs(elapsed)))
}

fn valid_steps(path: &[(usize, usize)]) -> bool {
    path.windows(2).all(|w| {
        let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
        matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
    })
}

fn resum(c: &[Vec<f64>], path: &[(usize, usize)]) -> f64 {
    path.iter().map(|&(i, j)| c[i][j]).sum()
}

fn dtw_path_validity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..CORPUS {
        let c = random_costs(&mut rng);
        let (n, m) = (c.len(), c[0].len());
        let cm = CostMatrix::from_rows(&c).unwrap();

        let a = dtw(&cm);
        ensure(a.path.first() == Some(&(0, 0)) && a.path.last() == Some(&(n - 1, m - 1)), || {
            format!("case {case}: dtw path endpoints {:?}", a.path)
        })?;
        ensure(valid_steps(&a.path), || format!("case {case}: invalid dtw step in {:?}", a.path))?;
        let err = (resum(&c, &a.path) - a.value).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("case {case}: dtw path re-sums to {err} off"))?;
        ensure(a.value == oracle_dtw(&c, 0, m), || format!("case {case}: dtw value differs from oracle"))?;

        let s = sdtw(&cm);
        ensure(s.path.first() == Some(&(0, s.span.0)) && s.path.last() == Some(&(n - 1, s.span.1 - 1)), || {
            format!("case {case}: sdtw path {:?} does not match span {:?}", s.path, s.span)
        })?;
        ensure(valid_steps(&s.path), || format!("case {case}: invalid sdtw step"))?;
        let err = (resum(&c, &s.path) - s.value).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("case {case}: sdtw path re-sums to {err} off"))?;
    }
    Ok(format!("{CORPUS} dtw and sdtw paths valid, worst re-sum error {worst:.1e}"))
}

// Dataset builders.

fn trajectory(id: &str, modality: &str, emb: Matrix<f32>) -> Trajectory {
    let n = emb.rows();
    Trajectory {
        id: id.to_string(),
        instruction: format!("instruction of {id}"),
        instruction_embedding: None,
        ee_positions: vec![[0.0; 3]; n],
        states: Matrix::zeros(n, 1),
        actions: Matrix::zeros(n, 1),
        embeddings: BTreeMap::from([(modality.to_string(), emb)]),
    }
}

fn dataset(role: Role, dim: usize, trajs: Vec<Trajectory>) -> Dataset {
    Dataset::new(role, 1, 1, None, vec![ModalitySpec::new("visual", dim)], trajs).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f32> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn exact_copy_retrieval() -> Result<String, String> {
    let exec = Executor::with_threads(0).unwrap();
    let dim = 8;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg_lens = [rng.random_range(5..=15), rng.random_range(5..=15)];
        let target_emb = random_matrix(&mut rng, seg_lens[0] + seg_lens[1], dim);
        let segments = vec![
            Segment { trajectory_id: "target".into(), start: 0, end: seg_lens[0] },
            Segment { trajectory_id: "target".into(), start: seg_lens[0], end: seg_lens[0] + seg_lens[1] },
        ];
        let mut priors: Vec<Trajectory> = (0..30)
            .map(|i| {
                let len = rng.random_range(30..=60);
                trajectory(&format!("p{i:02}"), "visual", random_matrix(&mut rng, len, dim))
            })
            .collect();
        // Plant each segment once, in distinct prior trajectories.
        let mut planted = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            let host = rng.random_range(0..15) + 15 * s;
            let emb = priors[host].embeddings.get_mut("visual").unwrap();
            let at = rng.random_range(0..=emb.rows() - seg.len());
            for r in 0..seg.len() {
                emb.row_mut(at + r).copy_from_slice(target_emb.row(seg.start + r));
            }
            planted.push((format!("p{host:02}"), at, at + seg.len()));
        }
        let target = dataset(Role::Target, dim, vec![trajectory("target", "visual", target_emb)]);
        let prior = dataset(Role::Prior, dim, priors);
        for metric in [Metric::L2, Metric::SquaredL2] {
            let options = RetrievalOptions { metric, normalize: false };
            let set = retrieve_modality(&segments, &target, &prior, "visual", 10, &options, &exec).unwrap();
            for (s, (id, start, end)) in planted.iter().enumerate() {
                let first = set.matches.iter().find(|m| m.query == segments[s]).unwrap();
                ensure(
                    first.rank == 0
                        && &first.prior_trajectory_id == id
                        && first.cost == 0.0
                        && (first.start, first.end) == (*start, *end),
                    || {
                        format!(
                            "seed {seed} {metric:?} segment {s}: top match {first:?}, planted {id} [{start}, {end})"
                        )
                    },
                )?;
            }
        }
    }
    Ok("planted copy ranked first at cost 0 with exact span in 100/100 seeds for l2 and squared_l2".into())
}

fn softmax_weight_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64);
    for case in 0..1000 {
        let f = rng.random_range(2..=6);
        let scores: BTreeMap<String, f64> = (0..f).map(|i| (format!("m{i}"), rng.random_range(-50.0..50.0))).collect();
        let tau = rng.random_range(0.1..20.0);
        let w = softmax_weights(&scores, tau).unwrap();
        let sum: f64 = w.weights.values().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        let c = rng.random_range(-1000.0..1000.0);
        let shifted: BTreeMap<String, f64> = scores.iter().map(|(k, v)| (k.clone(), v + c)).collect();
        let ws = softmax_weights(&shifted, tau).unwrap();
        for (k, v) in &w.weights {
            worst_shift = worst_shift.max((v - ws.weights[k]).abs());
        }
        let hot = softmax_weights(&scores, 1e6).unwrap();
        let spread = hot.weights.values().cloned().fold(f64::MIN, f64::max)
            - hot.weights.values().cloned().fold(f64::MAX, f64::min);
        ensure(spread < 1e-4, || format!("case {case}: tau=1e6 spread {spread}"))?;
        let cold = softmax_weights(&scores, 1e-6).unwrap();
        let top = scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        ensure(cold.weights[top] > 0.999, || format!("case {case}: tau=1e-6 argmax weight {}", cold.weights[top]))?;
    }
    ensure(worst_sum <= 1e-9, || format!("sum off by {worst_sum}"))?;
    ensure(worst_shift <= 1e-9, || format!("shift changed weights by {worst_shift}"))?;

    let dir = tempfile::tempdir().unwrap();
    let mut temps = Vec::new();
    for preset in ["sim", "real"] {
        let path = dir.path().join(format!("{preset}.json"));
        std::fs::write(&path, format!(r#"{{"preset": "{preset}", "target": "t", "prior": "p", "output": "o"}}"#))
            .unwrap();
        temps.push(PipelineConfig::load(&path).unwrap().weighting.temperature);
    }
    ensure(temps == [2.0, 10.0], || format!("preset temperatures {temps:?}"))?;
    Ok(format!(
        "1000 score sets: sum error {worst_sum:.1e}, shift error {worst_shift:.1e}, tau limits hold; presets load tau 2 and 10"
    ))
}

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    ChiSquared::new((observed.len() - 1) as f64).unwrap().sf(stat)
}

fn sampler_fixture() -> (Dataset, BTreeMap<String, AugmentedSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = dataset(
        Role::Target,
        2,
        (0..3).map(|i| trajectory(&format!("t{i}"), "visual", random_matrix(&mut rng, 40, 2))).collect(),
    );
    let names = ["language", "motion", "shape", "visual"];
    let sets = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let matches = (0..4 + k)
                .map(|i| MatchResult {
                    modality: name.to_string(),
                    query: Segment { trajectory_id: "t0".into(), start: 0, end: 20 },
                    rank: i,
                    prior_trajectory_id: format!("p{i}"),
                    start: 3 * i,
                    end: 3 * i + 15 + 2 * k,
                    cost: i as f64,
                    instruction: String::new(),
                })
                .collect();
            let set = RetrievedSet::new(*name, RetrievalKind::SubTrajectory, matches);
            (name.to_string(), build_augmented(&set, &target, 10).unwrap())
        })
        .collect();
    (target, sets)
}

fn sampler_frequencies() -> Result<String, String> {
    const DRAWS: usize = 1_000_000;
    let (_target, sets) = sampler_fixture();
    // Weights listed for visual, motion, shape and language; they sum to 0.99
    // and the sampler normalizes them.
    let fixture = BTreeMap::from([
        ("visual".to_string(), 0.28),
        ("motion".to_string(), 0.18),
        ("shape".to_string(), 0.46),
        ("language".to_string(), 0.07),
    ]);
    let weights = ModalityWeights::normalized(fixture.clone()).unwrap();
    let mut stream = sample_stream(&sets, &weights, 1, DRAWS, 2024).unwrap();
    let order = stream.modalities();
    let mut counts = vec![0u64; order.len()];
    let mut per_unit: Vec<Vec<u64>> = order.iter().map(|m| vec![0; sets[*m].len()]).collect();
    for _ in 0..DRAWS {
        let (m, u) = stream.draw();
        counts[m] += 1;
        per_unit[m][u] += 1;
    }
    let mut worst = 0.0f64;
    let mut worst_raw = 0.0f64;
    for (i, m) in order.iter().enumerate() {
        let freq = counts[i] as f64 / DRAWS as f64;
        worst = worst.max((freq - weights.get(m)).abs());
        worst_raw = worst_raw.max((freq - fixture[*m]).abs());
    }
    ensure(worst <= 0.005, || format!("frequency deviates by {worst}"))?;
    let expected: Vec<f64> = order.iter().map(|m| weights.get(m) * DRAWS as f64).collect();
    let p_modality = chi_square_p(&counts, &expected);
    ensure(p_modality > 0.001, || format!("modality chi-square p = {p_modality}"))?;
    let mut p_min = 1.0f64;
    for (i, units) in per_unit.iter().enumerate() {
        let e = counts[i] as f64 / units.len() as f64;
        p_min = p_min.min(chi_square_p(units, &vec![e; units.len()]));
    }
    ensure(p_min > 0.001, || format!("window uniformity chi-square p = {p_min}"))?;

    let first: Vec<_> = sample_stream(&sets, &weights, 100, 50, 7).unwrap().collect();
    let again: Vec<_> = sample_stream(&sets, &weights, 100, 50, 7).unwrap().collect();
    let other: Vec<_> = sample_stream(&sets, &weights, 100, 50, 8).unwrap().collect();
    ensure(first == again && first != other, || "seeded streams are not reproducible".into())?;

    let uniform = ModalityWeights::uniform(&order).unwrap();
    let mut stream = sample_stream(&sets, &uniform, 1, DRAWS, 5).unwrap();
    let mut ucounts = vec![0u64; order.len()];
    for _ in 0..DRAWS {
        ucounts[stream.draw().0] += 1;
    }
    let uworst = ucounts.iter().map(|&c| (c as f64 / DRAWS as f64 - 0.25).abs()).fold(0.0, f64::max);
    ensure(uworst <= 0.005, || format!("uniform mode deviates by {uworst}"))?;
    Ok(format!(
        "1e6 draws: max |freq - w| {worst:.4} (vs unnormalized fixture {worst_raw:.4}), modality p {p_modality:.3}, min window p {p_min:.3}, uniform dev {uworst:.4}, seeded stream reproducible"
    ))
}

/// Positions moving along x with the given per-step displacements.
fn positions(steps: &[f32]) -> Vec<[f32; 3]> {
    let mut x = 0.0f32;
    let mut out = vec![[0.0, 0.0, 0.0]];
    for &s in steps {
        x += s;
        out.push([x, 0.0, 0.0]);
    }
    out
}

fn profile(parts: &[(f32, usize)]) -> Vec<f32> {
    parts.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n)).collect()
}

fn bounds(steps: &[f32], cfg: &SegmenterConfig) -> Vec<(usize, usize)> {
    segment_positions("x", &positions(steps), cfg).unwrap().into_iter().map(|s| (s.start, s.end)).collect()
}

fn segmentation() -> Result<String, String> {
    let sim = SegmenterConfig::simulation();
    let real = SegmenterConfig::real();
    let (mv, stop) = (0.01f32, 0.0f32);
    let crafted: Vec<Profile> = vec![
        ("one pause", profile(&[(mv, 29), (stop, 3), (mv, 30)]), sim, vec![(0, 29), (29, 63)]),
        (
            "two pauses",
            profile(&[(mv, 25), (stop, 4), (mv, 25), (stop, 4), (mv, 25)]),
            sim,
            vec![(0, 25), (25, 54), (54, 84)],
        ),
        (
            "short middle merges left",
            profile(&[(mv, 30), (stop, 2), (mv, 5), (stop, 2), (mv, 30)]),
            sim,
            vec![(0, 37), (37, 70)],
        ),
        ("leading pause", profile(&[(stop, 3), (mv, 40)]), sim, vec![(0, 44)]),
        ("slow counts as pause in sim", profile(&[(mv, 30), (0.003, 3), (mv, 30)]), sim, vec![(0, 30), (30, 64)]),
        ("slow is motion in real", profile(&[(mv, 30), (0.003, 3), (mv, 30)]), real, vec![(0, 64)]),
        ("never moves", profile(&[(stop, 50)]), sim, vec![(0, 51)]),
    ];
    for (name, steps, cfg, want) in &crafted {
        let got = bounds(steps, cfg);
        ensure(&got == want, || format!("{name}: got {got:?}, want {want:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    const TRAJECTORIES: usize = 100_000;
    for case in 0..TRAJECTORIES {
        let n = rng.random_range(1..=200);
        let pause_rate = rng.random_range(0.0..0.3);
        let mut pos = vec![[0.0f32; 3]];
        for _ in 1..n {
            let last = *pos.last().unwrap();
            let step = if rng.random::<f64>() < pause_rate { 0.0005 } else { 0.02 };
            pos.push([
                last[0] + step * rng.random_range(-1.0f32..1.0),
                last[1] + step * rng.random_range(-1.0f32..1.0),
                last[2],
            ]);
        }
        let cfg = SegmenterConfig { epsilon: rng.random_range(1e-3..2e-2), min_length: rng.random_range(1..=40) };
        let segs = segment_positions("x", &pos, &cfg).unwrap();
        let covers = segs.first().map(|s| s.start) == Some(0)
            && segs.last().map(|s| s.end) == Some(n)
            && segs.windows(2).all(|w| w[0].end == w[1].start)
            && segs.iter().all(|s| s.start < s.end);
        ensure(covers, || format!("case {case}: segments {segs:?} do not partition [0, {n})"))?;
        let min_ok = if n < cfg.min_length { segs.len() == 1 } else { segs.iter().all(|s| s.len() >= cfg.min_length) };
        ensure(min_ok, || format!("case {case}: min_length {} violated by {segs:?}", cfg.min_length))?;
    }
    Ok(format!(
        "{} crafted profiles exact; {TRAJECTORIES} random trajectories partitioned with min_length held",
        crafted.len()
    ))
}

fn world_inputs(seed: u64) -> (Inputs, demofuse::synthbench::Labels) {
    let w = generate_world(&WorldConfig { seed, language_dim: None, ..Default::default() }).unwrap();
    let modalities = w.target.modalities().iter().map(|m| m.name.clone()).collect();
    (Inputs { target: w.target, prior: w.prior, modalities, language: false }, w.labels)
}

fn synthbench_end_to_end() -> Result<String, String> {
    let exec = Executor::with_threads(0).unwrap();

    // Full on-disk run on the default world (5 tasks, 60 prior demonstrations each, K = 100, separation 10).
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let world = generate_world(&WorldConfig::default()).unwrap();
    write_dataset(&world.target, dir.path().join("target")).unwrap();
    write_dataset(&world.prior, dir.path().join("prior")).unwrap();
    world.labels.write(dir.path().join(LABELS_FILE)).unwrap();
    let mut cfg = PipelineConfig::preset(
        Preset::Sim,
        dir.path().join("target"),
        dir.path().join("prior"),
        dir.path().join("out"),
    );
    cfg.labels = Some(dir.path().join(LABELS_FILE));
    ensure(cfg.retrieval.k == 100, || "default K is not 100".into())?;
    let summary = run_pipeline(&cfg, &exec, &mut StageLog::new(&mut std::io::sink())).map_err(|e| e.to_string())?;
    let full = t0.elapsed();
    let report = summary.report.unwrap();
    let visual = report.precision["visual"];
    ensure(visual >= 0.9, || format!("informative precision {visual:.3} < 0.9"))?;
    ensure(full < Duration::from_secs(300), || format!("pipeline took {}", secs(full)))?;

    // Weight/precision concordance on one-informative/one-uninformative worlds.
    let mut agree = 0;
    let mut min_precision = f64::INFINITY;
    for seed in 0..20u64 {
        let (inputs, labels) = world_inputs(seed);
        let cfg = PipelineConfig::preset(Preset::Sim, "", "", "");
        let segments = run_segment(&cfg, &inputs.target).unwrap();
        let sets = run_retrieve(&cfg, &inputs, &segments, &exec).unwrap();
        let (_, weights) = run_weigh(&cfg, &inputs.target, &inputs.prior, &sets, &exec).unwrap();
        let r = evaluate(&labels, &sets, &weights, None);
        agree += r.weight_ranking_correct as usize;
        let informative = sets.iter().find(|s| s.modality == "visual").unwrap();
        min_precision = min_precision.min(retrieval_precision(informative, &labels));
    }
    ensure(agree >= 18, || format!("argmax weight matched the most precise modality in {agree}/20 seeds"))?;
    ensure(min_precision >= 0.9, || format!("informative precision fell to {min_precision:.3} on some seed"))?;
    Ok(format!(
        "precision {visual:.3} (min over 20 worlds {min_precision:.3}), concordance {agree}/20, full pipeline {}",
        secs(full)
    ))
}

fn performance() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 64;
    let seg_len = 40;
    let target =
        dataset(Role::Target, dim, vec![trajectory("target", "visual", random_matrix(&mut rng, 10 * seg_len, dim))]);
    let segments: Vec<Segment> = (0..10)
        .map(|i| Segment { trajectory_id: "target".into(), start: i * seg_len, end: (i + 1) * seg_len })
        .collect();
    let prior = dataset(
        Role::Prior,
        dim,
        (0..1000).map(|i| trajectory(&format!("p{i:04}"), "visual", random_matrix(&mut rng, 300, dim))).collect(),
    );
    let options = RetrievalOptions::default();
    let mut runs = Vec::new();
    for threads in [1usize, 4, 8] {
        let exec = Executor::with_threads(threads).unwrap();
        let t0 = Instant::now();
        let set = retrieve_modality(&segments, &target, &prior, "visual", 100, &options, &exec).unwrap();
        runs.push((threads, exec.threads(), t0.elapsed(), set));
    }
    let key = |s: &RetrievedSet| -> Vec<(String, usize, usize, u64)> {
        s.matches.iter().map(|m| (m.prior_trajectory_id.clone(), m.start, m.end, m.cost.to_bits())).collect()
    };
    let reference = key(&runs[0].3);
    ensure(reference.len() == 1000, || format!("expected 1000 matches, got {}", reference.len()))?;
    for (threads, _, _, set) in &runs[1..] {
        ensure(key(set) == reference, || format!("results with {threads} threads differ from 1 thread"))?;
    }
    let slowest = runs.iter().map(|r| r.2).max().unwrap();
    ensure(slowest < Duration::from_secs(30), || format!("retrieval took {}", secs(slowest)))?;
    let times: Vec<String> =
        runs.iter().map(|(t, actual, d, _)| format!("{t} ({actual} live): {}", secs(*d))).collect();
    Ok(format!(
        "10 x 1000 retrieval bit-identical across thread counts; {} ({} cores available)",
        times.join(", "),
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    ))
}

fn dir_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism_and_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let world =
        generate_world(&WorldConfig { trajectories_per_task: 8, target_demos: 3, seed: 21, ..Default::default() })
            .unwrap();
    write_dataset(&world.prior, d.join("a")).unwrap();
    let loaded = load_dataset(d.join("a")).unwrap();
    ensure(loaded == world.prior, || "loaded dataset differs from the written one".into())?;
    write_dataset(&loaded, d.join("b")).unwrap();
    let (a, b) = (dir_files(&d.join("a")), dir_files(&d.join("b")));
    ensure(a == b && !a.is_empty(), || "rewritten dataset is not byte-identical".into())?;

    write_dataset(&world.target, d.join("target")).unwrap();
    world.labels.write(d.join(LABELS_FILE)).unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [("run1", 1), ("run2", 4)] {
        let mut cfg = PipelineConfig::preset(Preset::Sim, d.join("target"), d.join("a"), d.join(run));
        cfg.labels = Some(d.join(LABELS_FILE));
        cfg.retrieval.k = 20;
        run_pipeline(&cfg, &Executor::with_threads(threads).unwrap(), &mut StageLog::new(&mut std::io::sink()))
            .map_err(|e| e.to_string())?;
        outputs.push(dir_files(&d.join(run)));
    }
    ensure(outputs[0] == outputs[1], || {
        let diff: Vec<&String> = outputs[0].keys().filter(|k| outputs[0].get(*k) != outputs[1].get(*k)).collect();
        format!("artifacts differ between runs: {diff:?}")
    })?;
    Ok(format!(
        "{} dataset files byte-identical after write/load/write; {} pipeline artifacts byte-identical across reruns",
        a.len(),
        outputs[0].len()
    ))
}

fn main() {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "sdtw equals brute-force span minimum", sdtw_oracle_equivalence),
        (2, "dtw path validity", dtw_path_validity),
        (3, "exact-copy retrieval", exact_copy_retrieval),
        (4, "softmax weights", softmax_weight_properties),
        (5, "sampler frequencies", sampler_frequencies),
        (6, "segmentation", segmentation),
        (7, "synthetic benchmark end to end", synthbench_end_to_end),
        (8, "retrieval performance and thread independence", performance),
        (9, "determinism and round trip", determinism_and_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &n.to_string()) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = secs(t0.elapsed());
        match outcome {
            Ok(detail) => println!("criterion {n} PASS [{name}] {detail} ({took})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL [{name}] {detail} ({took})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
