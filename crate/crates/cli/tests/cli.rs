use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn demofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demofuse")).args(args).env("DEMOFUSE_THREADS", "2").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_world(dir: &Path) {
    let o = demofuse(&["generate", "--out", p(dir), "--per-task", "5", "--target-demos", "2", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_lists_every_subcommand() {
    let o = demofuse(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["generate", "segment", "retrieve", "weigh", "sample", "bench", "pipeline"] {
        assert!(text.contains(cmd), "{text}");
    }
}

#[test]
fn missing_dataset_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dataset");
    let o = demofuse(&["segment", "--target", p(&missing), "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-dataset"), "{}", stderr(&o));

    let o = demofuse(&["pipeline", "--target", p(&missing), "--prior", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-dataset"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let cfg = dir.path().join("c.json");
    let body = serde_json::json!({
        "target": dir.path().join("target"),
        "prior": dir.path().join("prior"),
        "output": dir.path().join("out"),
        "retrieval": {"k": 0},
        "weighting": {"temperature": 0.0}
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let o = demofuse(&["pipeline", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("retrieval.k") && err.contains("weighting.temperature"), "{err}");
}

#[test]
fn corrupt_record_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path());
    let rec = dir.path().join("target").join("000000.bin");
    let bytes = fs::read(&rec).unwrap();
    fs::write(&rec, &bytes[..bytes.len() / 2]).unwrap();
    let o = demofuse(&["segment", "--target", p(&dir.path().join("target")), "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("truncated"));
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_world(d);
    let (target, prior) = (d.join("target"), d.join("prior"));
    let run = |args: &[&str]| {
        let o = demofuse(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["segment", "--target", p(&target), "--out", p(&d.join("segments.json"))]);
    run(&[
        "retrieve",
        "--target",
        p(&target),
        "--prior",
        p(&prior),
        "--segments",
        p(&d.join("segments.json")),
        "--out",
        p(&d.join("r")),
        "-k",
        "8",
        "--metric",
        "squared_l2",
    ]);
    for m in ["visual", "motion", "language"] {
        assert!(d.join("r/retrieved").join(format!("{m}.jsonl")).is_file());
    }
    run(&[
        "weigh",
        "--target",
        p(&target),
        "--prior",
        p(&prior),
        "--retrieved",
        p(&d.join("r")),
        "--out",
        p(&d.join("weights.json")),
        "--preset",
        "real",
    ]);
    let weights: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("weights.json")).unwrap()).unwrap();
    assert_eq!(weights["weights"]["temperature"], 10.0);
    run(&[
        "sample",
        "--target",
        p(&target),
        "--retrieved",
        p(&d.join("r")),
        "--weights",
        p(&d.join("weights.json")),
        "--out",
        p(&d.join("samples.jsonl")),
        "--batch-size",
        "4",
        "--num-batches",
        "3",
    ]);
    let text = fs::read_to_string(d.join("samples.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.lines().next().unwrap().contains("\"header\""));

    run(&[
        "sample",
        "--target",
        p(&target),
        "--retrieved",
        p(&d.join("r")),
        "--uniform",
        "--out",
        p(&d.join("uniform.jsonl")),
        "--num-batches",
        "1",
    ]);
    assert!(fs::read_to_string(d.join("uniform.jsonl")).unwrap().contains("\"uniform\":true"));
}

#[test]
fn external_scores_drive_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_world(d);
    let (target, prior) = (d.join("target"), d.join("prior"));
    let o = demofuse(&[
        "retrieve",
        "--target",
        p(&target),
        "--prior",
        p(&prior),
        "--out",
        p(d),
        "-k",
        "4",
        "--no-language",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = d.join("scores.json");
    fs::write(&scores, r#"{"checkpoint_scores": {"visual": [-1.0, -3.0], "motion": [-2.0]}}"#).unwrap();
    let spec = format!("external:{}", p(&scores));
    let o = demofuse(&[
        "weigh",
        "--target",
        p(&target),
        "--prior",
        p(&prior),
        "--retrieved",
        p(d),
        "--out",
        p(&d.join("w.json")),
        "--scorer",
        &spec,
        "--temperature",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("w.json")).unwrap()).unwrap();
    // Both average to -2, so the weights are equal.
    assert!((w["weights"]["weights"]["visual"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn pipeline_reruns_are_byte_identical_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_world(d);
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let out = d.join(run);
        let o = demofuse(&[
            "--threads",
            threads,
            "pipeline",
            "--target",
            p(&d.join("target")),
            "--prior",
            p(&d.join("prior")),
            "--out",
            p(&out),
            "--labels",
            p(&d.join("labels.json")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        for line in stderr(&o).lines() {
            let v: serde_json::Value = serde_json::from_str(line).expect("stage logs are JSON lines");
            assert!(v.get("event").is_some());
        }
        outputs.push(out);
    }
    for f in [
        "segments.json",
        "retrieved/visual.jsonl",
        "retrieved/motion.jsonl",
        "retrieved/language.jsonl",
        "weights.json",
        "samples.jsonl",
        "eval_report.json",
        "run_manifest.json",
    ] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bench_prints_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = demofuse(&["bench", "--out", p(dir.path()), "--per-task", "6", "--target-demos", "2", "-k", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("precision") && text.contains("concordant"), "{text}");
    assert!(dir.path().join("run/eval_report.json").is_file());
}
