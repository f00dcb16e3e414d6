use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use demofuse::exec::THREADS_ENV;
use demofuse::pipeline::{
    build_all_augmented, load_inputs, read_retrieved, read_segments, read_weights, retrieved_file, run_pipeline,
    run_retrieve, run_sample, run_segment, run_weigh, ArtifactWriter, Inputs, PipelineConfig, Preset, ScorerSpec,
    StageLog, EVAL_FILE,
};
use demofuse::retrieval::Metric;
use demofuse::synthbench::{generate_world, SynthModality, WorldConfig, LABELS_FILE};
use demofuse::trajstore::{load_dataset, write_dataset};
use demofuse::weighting::ModalityWeights;
use demofuse::{Error, Executor};

/// Multi-modal retrieval and importance-weighted curation of demonstration data.
#[derive(Parser)]
#[command(name = "demofuse", version, about)]
struct Cli {
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-task world (target/, prior/, labels.json).
    Generate(GenerateArgs),
    /// Split target demonstrations at motion pauses.
    Segment(SegmentArgs),
    /// Retrieve matching prior data per modality.
    Retrieve(RetrieveArgs),
    /// Score retrieved sets and compute modality weights.
    Weigh(WeighArgs),
    /// Draw an importance-weighted stream of training windows.
    Sample(SampleArgs),
    /// Generate a world and run every stage on it, printing a summary.
    Bench(BenchArgs),
    /// Run every stage from a configuration.
    Pipeline(PipelineArgs),
}

/// Options shared by every stage: a JSON config and preset to start from.
#[derive(Args)]
struct Base {
    /// JSON configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Default values for a simulated (sim) or real-robot (real) setting.
    #[arg(long)]
    preset: Option<Preset>,
}

impl Base {
    fn load(&self, target: &Path, prior: &Path, output: &Path) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::preset(self.preset.unwrap_or_default(), target, prior, output),
        };
        if self.config.is_some() {
            if let Some(p) = self.preset {
                let fresh = PipelineConfig::preset(p, "", "", "");
                cfg.preset = p;
                cfg.segmenter = fresh.segmenter;
                cfg.weighting.temperature = fresh.weighting.temperature;
            }
            for (slot, v) in [(&mut cfg.target, target), (&mut cfg.prior, prior), (&mut cfg.output, output)] {
                if !v.as_os_str().is_empty() {
                    *slot = v.to_path_buf();
                }
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct WorldArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    num_tasks: usize,
    /// Prior demonstrations per task.
    #[arg(long, default_value_t = 60)]
    per_task: usize,
    #[arg(long, default_value_t = 5)]
    target_demos: usize,
    /// Distance between task clusters in units of the within-cluster noise.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Omit instruction embeddings.
    #[arg(long)]
    no_language: bool,
    /// Full world configuration as JSON; replaces the flags above.
    #[arg(long)]
    world_config: Option<PathBuf>,
}

impl WorldArgs {
    fn config(&self) -> Result<WorldConfig> {
        if let Some(path) = &self.world_config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read world config {}: {e}", path.display())))?;
            return Ok(serde_json::from_str(&text).map_err(|e| Error::Config(format!("world config: {e}")))?);
        }
        Ok(WorldConfig {
            num_tasks: self.num_tasks,
            trajectories_per_task: self.per_task,
            target_demos: self.target_demos,
            cluster_separation: self.separation,
            language_dim: (!self.no_language).then_some(16),
            modalities: vec![SynthModality::new("visual", 16, true), SynthModality::new("motion", 16, false)],
            seed: self.seed,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    world: WorldArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
    /// Pause threshold on summed per-axis end-effector speed.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    min_length: Option<usize>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Segments file from `segment`; computed from the target when absent.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Output directory; one `retrieved/<modality>.jsonl` per modality.
    #[arg(long)]
    out: PathBuf,
    /// Embedding modality to retrieve with (repeatable); default all shared.
    #[arg(long = "modality")]
    modalities: Vec<String>,
    /// Matches kept per target segment.
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    /// Scale frame embeddings to unit length before comparing.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    language_threshold: Option<f64>,
    #[arg(long)]
    frame_budget: Option<usize>,
    #[arg(long)]
    no_language: bool,
}

#[derive(Args)]
struct WeighArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Directory written by `retrieve`.
    #[arg(long)]
    retrieved: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
    /// `knn-gaussian` or `external:<scores.json>`.
    #[arg(long)]
    scorer: Option<ScorerSpec>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    base: Base,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Directory written by `retrieve`.
    #[arg(long)]
    retrieved: PathBuf,
    /// Weights file written by `weigh`; required unless `--uniform`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output JSON-lines manifest.
    #[arg(long)]
    out: PathBuf,
    /// Window length in frames.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    num_batches: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ignore weights and sample every modality equally.
    #[arg(long)]
    uniform: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    base: Base,
    /// Working directory for the world and the run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Matches kept per target segment.
    #[arg(short, long)]
    k: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    base: Base,
    /// Target dataset directory.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Prior dataset directory.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Run directory for artifacts and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Task labels; adds the evaluation stage.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Weight every modality equally and skip scoring.
    #[arg(long)]
    uniform: bool,
}

fn opt(path: &Option<PathBuf>) -> &Path {
    path.as_deref().unwrap_or(Path::new(""))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{what}: no path given")).into());
    }
    if !path.is_dir() {
        return Err(Error::Config(format!("{what}: directory {} does not exist", path.display())).into());
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what}: file {} does not exist", path.display())).into());
    }
    Ok(())
}

fn write_pretty(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Every retrieved set under `dir/retrieved`, in modality name order.
fn load_retrieved_dir(dir: &Path) -> Result<Vec<demofuse::retrieval::RetrievedSet>> {
    let sub = dir.join("retrieved");
    require_dir(&sub, "retrieved")?;
    let mut files: Vec<PathBuf> = fs::read_dir(&sub)
        .with_context(|| format!("listing {}", sub.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NoData(format!("no retrieved sets in {}", sub.display())).into());
    }
    files.iter().map(|f| Ok(read_retrieved(f)?.1)).collect()
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let world = generate_world(&args.world.config()?)?;
    write_dataset(&world.target, args.out.join("target"))?;
    write_dataset(&world.prior, args.out.join("prior"))?;
    world.labels.write(args.out.join(LABELS_FILE))?;
    println!(
        "wrote {} target and {} prior demonstrations to {}",
        world.target.len(),
        world.prior.len(),
        args.out.display()
    );
    Ok(())
}

fn segment(args: &SegmentArgs, log: &mut StageLog<'_>) -> Result<()> {
    let mut cfg = args.base.load(opt(&args.target), Path::new(""), Path::new(""))?;
    if let Some(e) = args.epsilon {
        cfg.segmenter.epsilon = e;
    }
    if let Some(m) = args.min_length {
        cfg.segmenter.min_length = m;
    }
    require_dir(&cfg.target, "target")?;
    let segments = log.stage("segment", || {
        let target = load_dataset(&cfg.target)?;
        run_segment(&cfg, &target)
    })?;
    write_pretty(&args.out, &serde_json::json!({"config_hash": cfg.config_hash(), "segments": segments}))?;
    println!("{} segments written to {}", segments.len(), args.out.display());
    Ok(())
}

fn retrieve(args: &RetrieveArgs, exec: &Executor, log: &mut StageLog<'_>) -> Result<()> {
    let mut cfg = args.base.load(opt(&args.target), opt(&args.prior), &args.out)?;
    let r = &mut cfg.retrieval;
    if let Some(k) = args.k {
        r.k = k;
    }
    if let Some(m) = args.metric {
        r.metric = m;
    }
    r.normalize |= args.normalize;
    if let Some(t) = args.language_threshold {
        r.language_threshold = t;
    }
    if args.frame_budget.is_some() {
        r.frame_budget = args.frame_budget;
    }
    if args.no_language {
        r.language = false;
    }
    if !args.modalities.is_empty() {
        cfg.modalities = Some(args.modalities.clone());
    }
    require_dir(&cfg.target, "target")?;
    require_dir(&cfg.prior, "prior")?;
    let inputs: Inputs = log.stage("load", || load_inputs(&cfg))?;
    let segments = match &args.segments {
        Some(path) => {
            require_file(path, "segments")?;
            read_segments(path)?.1
        }
        None => log.stage("segment", || run_segment(&cfg, &inputs.target))?,
    };
    let sets = log.stage("retrieve", || run_retrieve(&cfg, &inputs, &segments, exec))?;
    let mut art = ArtifactWriter::create(&args.out, &cfg.config_hash())?;
    for s in &sets {
        art.write_retrieved(s)?;
        let note = s.warning.as_deref().map(|w| format!(" ({w})")).unwrap_or_default();
        println!(
            "{}: {} matches, {} frames -> {}{note}",
            s.modality,
            s.matches.len(),
            s.total_frames,
            args.out.join(retrieved_file(&s.modality)).display()
        );
    }
    Ok(())
}

fn weigh(args: &WeighArgs, exec: &Executor, log: &mut StageLog<'_>) -> Result<()> {
    let mut cfg = args.base.load(opt(&args.target), opt(&args.prior), Path::new(""))?;
    if let Some(s) = &args.scorer {
        cfg.weighting.scorer = s.clone();
    }
    if let Some(t) = args.temperature {
        cfg.weighting.temperature = t;
    }
    if let Some(s) = args.seed {
        cfg.weighting.seed = s;
    }
    require_dir(&cfg.target, "target")?;
    require_dir(&cfg.prior, "prior")?;
    if let ScorerSpec::External(p) = &cfg.weighting.scorer {
        require_file(p, "scorer")?;
    }
    let retrieved = load_retrieved_dir(&args.retrieved)?;
    let (scores, weights) = log.stage("weigh", || {
        let target = load_dataset(&cfg.target)?;
        let prior = load_dataset(&cfg.prior)?;
        run_weigh(&cfg, &target, &prior, &retrieved, exec)
    })?;
    write_pretty(
        &args.out,
        &serde_json::json!({"config_hash": cfg.config_hash(), "scores": scores, "weights": weights}),
    )?;
    for (m, w) in &weights.weights {
        println!("{m:<12} {w:.4}");
    }
    Ok(())
}

fn sample(args: &SampleArgs, log: &mut StageLog<'_>) -> Result<()> {
    let mut cfg = args.base.load(opt(&args.target), Path::new(""), Path::new(""))?;
    let s = &mut cfg.sampler;
    if let Some(v) = args.window {
        s.window = v;
    }
    if let Some(v) = args.batch_size {
        s.batch_size = v;
    }
    if let Some(v) = args.num_batches {
        s.num_batches = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    cfg.weighting.uniform |= args.uniform;
    require_dir(&cfg.target, "target")?;
    let retrieved = load_retrieved_dir(&args.retrieved)?;
    let weights = if cfg.weighting.uniform {
        let names: Vec<&str> = retrieved.iter().map(|r| r.modality.as_str()).collect();
        ModalityWeights::uniform(&names)?
    } else {
        let path =
            args.weights.as_ref().ok_or_else(|| Error::Config("weights: required unless --uniform is given".into()))?;
        require_file(path, "weights")?;
        read_weights(path)?.weights
    };
    let count = log.stage("sample", || {
        let target = load_dataset(&cfg.target)?;
        let augmented = build_all_augmented(&cfg, &target, &retrieved)?;
        let mut buf = Vec::new();
        let records = run_sample(&cfg, &augmented, &weights, &cfg.config_hash(), &mut buf)?;
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
        }
        fs::write(&args.out, &buf).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
        Ok(records.len())
    })?;
    println!("{count} records written to {}", args.out.display());
    Ok(())
}

fn print_report(report: &demofuse::synthbench::EvalReport) {
    println!("{:<12} {:>10} {:>10}", "modality", "precision", "weight");
    for (m, p) in &report.precision {
        let w = report.weights.get(m).copied().unwrap_or(0.0);
        println!("{m:<12} {p:>10.4} {w:>10.4}");
    }
    let name = |o: &Option<String>| o.clone().unwrap_or_else(|| "-".into());
    println!(
        "most precise: {}  highest weight: {}  concordant: {}",
        name(&report.most_precise),
        name(&report.highest_weight),
        if report.weight_ranking_correct { "yes" } else { "no" }
    );
    if let Some(s) = &report.sampler {
        println!("sampler: {} draws, max |frequency - weight| = {:.4}", s.draws, s.max_abs_deviation);
    }
}

fn bench(args: &BenchArgs, exec: &Executor, log: &mut StageLog<'_>) -> Result<()> {
    let world_dir = args.out.join("world");
    let world = generate_world(&args.world.config()?)?;
    write_dataset(&world.target, world_dir.join("target"))?;
    write_dataset(&world.prior, world_dir.join("prior"))?;
    world.labels.write(world_dir.join(LABELS_FILE))?;
    let mut cfg = args.base.load(&world_dir.join("target"), &world_dir.join("prior"), &args.out.join("run"))?;
    cfg.labels = Some(world_dir.join(LABELS_FILE));
    if let Some(k) = args.k {
        cfg.retrieval.k = k;
    }
    let summary = run_pipeline(&cfg, exec, log)?;
    if let Some(report) = &summary.report {
        print_report(report);
    }
    println!("report: {}", args.out.join("run").join(EVAL_FILE).display());
    Ok(())
}

fn pipeline(args: &PipelineArgs, exec: &Executor, log: &mut StageLog<'_>) -> Result<()> {
    let mut cfg = args.base.load(opt(&args.target), opt(&args.prior), opt(&args.out))?;
    if args.labels.is_some() {
        cfg.labels = args.labels.clone();
    }
    cfg.weighting.uniform |= args.uniform;
    let summary = run_pipeline(&cfg, exec, log)?;
    let weights: BTreeMap<_, _> = summary.weights.weights;
    for (m, w) in &weights {
        println!("{m:<12} {w:.4}");
    }
    if let Some(report) = &summary.report {
        print_report(report);
    }
    println!("config hash {} ; artifacts in {}", summary.config_hash, cfg.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = Executor::with_threads(cli.threads)?;
    let mut stderr = io::stderr().lock();
    let mut log = StageLog::new(&mut stderr);
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Segment(a) => segment(a, &mut log),
        Command::Retrieve(a) => retrieve(a, &exec, &mut log),
        Command::Weigh(a) => weigh(a, &exec, &mut log),
        Command::Sample(a) => sample(a, &mut log),
        Command::Bench(a) => bench(a, &exec, &mut log),
        Command::Pipeline(a) => pipeline(a, &exec, &mut log),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli));
    let _ = io::stdout().flush();
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(4, Error::exit_code);
            ExitCode::from(code as u8)
        }
        Err(_) => ExitCode::from(4),
    }
}
