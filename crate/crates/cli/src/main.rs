//! `roadsense`: dataset statistics, validation, synthesis, evaluation, pipeline runs
//! and throughput benchmarks.
//!
//! Exit codes: 0 success, 1 violations found, 2 usage error, 3 I/O or parse failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use roadsense::bag::{self, BagReader, BagWriter};
use roadsense::eval::{self, EvalConfig, Granularity};
use roadsense::geometry::{decode_ppm, encode_ppm, Frame};
use roadsense::graph::{self, GraphConfig, Payload, QueueMode, RunOptions};
use roadsense::pipeline::{self, annotate_frame, PipelineConfig, PipelineError};
use roadsense::synth::{self, CorpusSpec, CorpusTargets, NoiseSpec};
use roadsense::voc::{self, DatasetManifest, Split};
use roadsense::Taxonomy;

#[derive(Parser)]
#[command(name = "roadsense", version, about = "Traffic sign and light detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-superclass and per-class instance counts for a dataset manifest.
    Stats {
        manifest: PathBuf,
        /// Flag classes with fewer instances than this.
        #[arg(long)]
        min_instances: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Check every annotation in a manifest; exits 1 if anything is wrong.
    Validate {
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Write noisy predictions derived from ground truth, plus the tally they must evaluate to.
    Perturb(PerturbArgs),
    /// Score a JSON Lines prediction file against a manifest.
    Evaluate(EvaluateArgs),
    /// Run the two-stage pipeline over a frame directory or bag.
    Run(RunArgs),
    /// Measure throughput of a node graph.
    Bench(BenchArgs),
    /// Bag utilities.
    #[command(subcommand)]
    Bag(BagCommand),
    /// Print the class registry.
    Taxonomy {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["reference", "targets"])))]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Use the reference dataset's per-superclass train/test counts.
    #[arg(long)]
    reference: bool,
    /// Targets file: lines of `SUPERCLASS TRAIN TEST`, optionally `images TRAIN TEST`.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, env = "ROADSENSE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1920)]
    width: u32,
    #[arg(long, default_value_t = 1080)]
    height: u32,
    /// Objects per image when the targets give no image counts.
    #[arg(long, default_value_t = 8)]
    max_objects: usize,
    /// Write annotations only.
    #[arg(long)]
    no_frames: bool,
}

#[derive(Args)]
struct NoiseArgs {
    /// Probability of dropping each ground-truth object.
    #[arg(long, default_value_t = 0.0)]
    p_drop: f64,
    /// Maximum corner displacement in pixels.
    #[arg(long, default_value_t = 0)]
    jitter: u32,
    /// False boxes per image.
    #[arg(long, default_value_t = 0)]
    n_fp: u32,
}

impl NoiseArgs {
    fn spec(&self) -> NoiseSpec {
        NoiseSpec { p_drop: self.p_drop, jitter: self.jitter, n_fp: self.n_fp, fp_disjoint: true }
    }
}

#[derive(Args)]
struct PerturbArgs {
    manifest: PathBuf,
    /// Prediction file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long, env = "ROADSENSE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    manifest: PathBuf,
    predictions: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_IOU_THRESHOLD)]
    iou: f64,
    #[arg(long, default_value = "fine")]
    granularity: Granularity,
    #[arg(long)]
    split: Option<Split>,
    /// Leave classes with fewer ground-truth instances out of the per-class table.
    #[arg(long)]
    min_instances: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    score_floor: f64,
    /// Match boxes regardless of label.
    #[arg(long)]
    class_agnostic: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (`key = value` lines).
    config: PathBuf,
    /// Directory of PPM frames, or a bag file.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth manifest for oracle backends; overrides the config's `fixtures`.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Bag topic id holding the frames.
    #[arg(long, default_value_t = 0)]
    topic: u32,
    #[arg(long, env = "ROADSENSE_SEED", default_value_t = 0)]
    seed: u64,
    /// Skip writing annotated frames.
    #[arg(long)]
    no_frames: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Graph config; the reference topology when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    frames: usize,
    #[arg(long, default_value = "blocking")]
    mode: QueueMode,
    /// Override a node's simulated latency, as `node=ms`. Repeatable.
    #[arg(long = "latency", value_parser = parse_latency)]
    latencies: Vec<(String, f64)>,
    /// Exclude the first outputs from the FPS figure.
    #[arg(long)]
    warmup: bool,
    /// Feed frames from a bag (topic 0) instead of a blank frame.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Record published messages to this bag.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Topics to record; all when omitted.
    #[arg(long, value_delimiter = ',')]
    record_topics: Vec<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum BagCommand {
    /// Pack a directory of PPM frames into a bag (topic 0, filename kept).
    Pack { dir: PathBuf, out: PathBuf },
    /// Record counts per topic.
    Info {
        bag: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Unpack the frames of one topic into a directory.
    Unpack {
        bag: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        topic: u32,
    },
}

fn parse_latency(s: &str) -> Result<(String, f64), String> {
    let (node, ms) = s.split_once('=').ok_or("expected node=ms")?;
    let ms: f64 = ms.parse().map_err(|_| format!("invalid latency `{ms}`"))?;
    if !(ms >= 0.0 && ms.is_finite()) {
        return Err("latency must be >= 0".into());
    }
    Ok((node.to_string(), ms))
}

/// A command outcome other than success.
enum Failure {
    Violations,
    Usage(anyhow::Error),
    Io(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

type Outcome = Result<(), Failure>;

fn io<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Io(e.into())
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t = Taxonomy::embedded();
    let result = match cli.command {
        Command::Stats { manifest, min_instances, json } => cmd_stats(&manifest, min_instances, json, t),
        Command::Validate { manifest, json } => cmd_validate(&manifest, json, t),
        Command::Synth(a) => cmd_synth(&a, t),
        Command::Perturb(a) => cmd_perturb(&a, t),
        Command::Evaluate(a) => cmd_evaluate(&a, t),
        Command::Run(a) => cmd_run(&a, t),
        Command::Bench(a) => cmd_bench(&a),
        Command::Bag(c) => cmd_bag(&c),
        Command::Taxonomy { json } => cmd_taxonomy(json, t),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Outcome {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(io)?;
    writeln!(out).map_err(io)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    DatasetManifest::load(path).map_err(io)
}

fn cmd_stats(manifest: &Path, min_instances: Option<u64>, json: bool, t: &Taxonomy) -> Outcome {
    let m = load_manifest(manifest)?;
    let report = voc::dataset_stats(&m, t).map_err(io)?.with_min_instances(min_instances);
    if json {
        print_json(&report)
    } else {
        print!("{}", report.to_table());
        Ok(())
    }
}

fn cmd_validate(manifest: &Path, json: bool, t: &Taxonomy) -> Outcome {
    let m = load_manifest(manifest)?;
    let violations = voc::validate_dataset(&m, t);
    if json {
        print_json(&violations)?;
    } else {
        for v in &violations {
            println!("{v}");
        }
        println!("{} annotation(s), {} violation(s)", m.entries.len(), violations.len());
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn cmd_synth(a: &SynthArgs, t: &Taxonomy) -> Outcome {
    let targets = match &a.targets {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
            CorpusTargets::parse(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
        }
        None => CorpusTargets::reference_dataset(),
    };
    if a.width == 0 || a.height == 0 {
        return Err(usage(anyhow!("frame size must be non-zero")));
    }
    let spec = CorpusSpec {
        targets,
        width: a.width,
        height: a.height,
        max_objects_per_image: a.max_objects,
        write_frames: !a.no_frames,
        seed: a.seed,
    };
    let m = synth::corpus(&spec, t, &a.out).map_err(io)?;
    println!("wrote {} annotation(s) to {}", m.entries.len(), a.out.display());
    Ok(())
}

fn cmd_perturb(a: &PerturbArgs, t: &Taxonomy) -> Outcome {
    let mut m = load_manifest(&a.manifest)?;
    if let Some(s) = a.split {
        m = m.filter_split(s);
    }
    let noise = a.noise.spec();
    noise.validate().map_err(usage)?;
    let anns = m.read_all(t).map_err(io)?;
    let mut preds = Vec::new();
    let mut expected = synth::ExpectedTally { exact: true, ..Default::default() };
    for (ann, _) in &anns {
        let (p, e) = synth::perturb(ann, &noise, synth::derive_seed(a.seed, &ann.filename), t).map_err(io)?;
        preds.extend(p);
        expected.overall += e.overall;
        for (label, tally) in e.per_class {
            *expected.per_class.entry(label).or_default() += tally;
        }
        expected.exact &= e.exact;
    }
    let file = fs::File::create(&a.out).with_context(|| a.out.display().to_string())?;
    let mut w = BufWriter::new(file);
    eval::write_predictions(&mut w, &preds).and_then(|()| w.flush()).with_context(|| a.out.display().to_string())?;
    print_json(&expected)
}

fn cmd_evaluate(a: &EvaluateArgs, t: &Taxonomy) -> Outcome {
    if !(0.0..1.0).contains(&a.iou) {
        return Err(usage(anyhow!("--iou must be in [0, 1)")));
    }
    let m = load_manifest(&a.manifest)?;
    let cfg = EvalConfig {
        iou_threshold: a.iou,
        granularity: a.granularity,
        class_aware: !a.class_agnostic,
        min_instances: a.min_instances,
        score_floor: a.score_floor,
        split: a.split,
    };
    let report = eval::evaluate(&m, &a.predictions, &cfg, t).map_err(io)?;
    if a.json {
        print_json(&report)?;
    } else {
        print!("{}", report.to_table());
        for v in &report.violations {
            eprintln!("line {}: {}: {}", v.line, v.image, v.reason);
        }
    }
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn list_frames(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .with_context(|| dir.display().to_string())?;
    frames.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")));
    frames.sort();
    Ok(frames)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_bag_file(path: &Path) -> anyhow::Result<Vec<bag::BagRecord>> {
    let file = fs::File::open(path).with_context(|| path.display().to_string())?;
    let reader = BagReader::new(io::BufReader::new(file)).with_context(|| path.display().to_string())?;
    reader.collect::<Result<_, _>>().with_context(|| path.display().to_string())
}

fn cmd_run(a: &RunArgs, t: &Taxonomy) -> Outcome {
    let text = fs::read_to_string(&a.config).with_context(|| a.config.display().to_string())?;
    let cfg = PipelineConfig::parse(&text).map_err(|e| match e {
        pipeline::ConfigError::UnknownBackend { .. } => usage(anyhow!("{}: {e}", a.config.display())),
        _ => io(anyhow!("{}: {e}", a.config.display())),
    })?;

    let fixtures_path = a.fixtures.clone().or_else(|| cfg.fixtures.as_ref().map(PathBuf::from));
    let fixtures = match fixtures_path {
        Some(p) => {
            let m = load_manifest(&p)?;
            let anns = m.read_all(t).map_err(io)?;
            anns.into_iter().map(|(a, _)| (a.filename.clone(), a)).collect()
        }
        None => return Err(io(anyhow!("oracle backends need ground truth: set `fixtures` or pass --fixtures"))),
    };
    let (detector, classifier) = cfg.build(fixtures, a.seed, t);

    // Frames either live on disk (loaded lazily) or come out of a bag.
    let mut in_memory: BTreeMap<String, Frame> = BTreeMap::new();
    let mut on_disk: BTreeMap<String, PathBuf> = BTreeMap::new();
    if a.input.is_dir() {
        for p in list_frames(&a.input)? {
            on_disk.insert(file_name(&p), p);
        }
    } else {
        let records = read_bag_file(&a.input)?;
        for (name, frame) in bag::replay_frames(&records, a.topic).with_context(|| a.input.display().to_string())? {
            if in_memory.insert(name.clone(), frame).is_some() {
                return Err(io(anyhow!("{}: duplicate frame `{name}`", a.input.display())));
            }
        }
    }
    let names: Vec<String> = if a.input.is_dir() { on_disk.keys().cloned().collect() } else { in_memory.keys().cloned().collect() };

    let frame_dir = a.out.join("frames");
    fs::create_dir_all(if a.no_frames { &a.out } else { &frame_dir }).with_context(|| a.out.display().to_string())?;
    let load = |name: &str| -> Result<Frame, PipelineError> {
        let fail = |message: String| PipelineError::Frame { name: name.to_string(), message };
        match on_disk.get(name) {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
                decode_ppm(&bytes).map(|(f, _)| f).map_err(|e| fail(format!("{}: {e}", p.display())))
            }
            None => in_memory.get(name).cloned().ok_or_else(|| fail("missing".into())),
        }
    };
    let visit = |name: &str, frame: &Frame, out: &pipeline::TwoStageOutput| -> Result<(), PipelineError> {
        if a.no_frames {
            return Ok(());
        }
        let path = frame_dir.join(name);
        fs::write(&path, encode_ppm(&annotate_frame(frame, &out.detections), Some(name)))
            .map_err(|e| PipelineError::Frame { name: name.to_string(), message: format!("{}: {e}", path.display()) })
    };
    let outputs =
        pipeline::run_batch(detector.as_ref(), classifier.as_ref(), &names, load, visit, cfg.score_floor, t).map_err(io)?;

    let preds_path = a.out.join("predictions.jsonl");
    let preds: Vec<eval::Prediction> = names
        .iter()
        .zip(&outputs)
        .flat_map(|(name, out)| out.detections.iter().map(move |d| d.to_prediction(name)))
        .collect();
    let file = fs::File::create(&preds_path).with_context(|| preds_path.display().to_string())?;
    let mut w = BufWriter::new(file);
    eval::write_predictions(&mut w, &preds).and_then(|()| w.flush()).with_context(|| preds_path.display().to_string())?;
    for (name, out) in names.iter().zip(&outputs) {
        for d in &out.diagnostics {
            match d.clamped {
                Some(b) => eprintln!("{name}: detection {} at {} clamped to {b}", d.index, d.original),
                None => eprintln!("{name}: detection {} at {} outside the frame, dropped", d.index, d.original),
            }
        }
    }
    println!("{} frame(s), {} detection(s) -> {}", names.len(), preds.len(), preds_path.display());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Outcome {
    let cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            GraphConfig::parse(&text).map_err(|e| io(anyhow!("{}: {e}", p.display())))?
        }
        None => GraphConfig::reference(),
    };
    let mut g = graph::build_graph(&cfg).map_err(|e| io(anyhow!("graph config: {e}")))?;
    for (node, ms) in &a.latencies {
        g.set_latency(node, *ms).map_err(usage)?;
    }
    let frames: Vec<Payload> = match &a.input {
        Some(p) => {
            let records = read_bag_file(p)?;
            bag::replay_topic(&records, 0).collect()
        }
        None => vec![Payload::from(encode_ppm(&Frame::filled(64, 36, synth::BACKGROUND), None))],
    };
    if frames.is_empty() && a.frames > 0 {
        return Err(io(anyhow!("input bag has no frames on topic 0")));
    }
    // Bag input is replayed in order; a single blank frame repeats.
    let source = frames.into_iter().cycle().take(a.frames);
    let opts = RunOptions { mode: a.mode, warmup: a.warmup };
    let report = match &a.record {
        Some(path) => {
            let names = g.topic_names().iter().map(|s| s.to_string()).collect::<Vec<_>>();
            let topics: Vec<&str> =
                if a.record_topics.is_empty() { names.iter().map(String::as_str).collect() } else { a.record_topics.iter().map(String::as_str).collect() };
            let file = fs::File::create(path).with_context(|| path.display().to_string())?;
            let (report, w) = bag::record_bag(&mut g, source, a.frames, opts, &topics, BufWriter::new(file)).map_err(|e| match e {
                graph::RunError::UnknownTopic(_) => usage(e),
                e => io(e),
            })?;
            w.into_inner().map_err(|e| io(e.into_error()))?;
            report
        }
        None => g.run(source, a.frames, opts).map_err(io)?,
    };
    if a.json {
        print_json(&report)
    } else {
        print!("{}", report.to_table());
        Ok(())
    }
}

fn cmd_bag(c: &BagCommand) -> Outcome {
    match c {
        BagCommand::Pack { dir, out } => {
            let file = fs::File::create(out).with_context(|| out.display().to_string())?;
            let mut w = BagWriter::new(BufWriter::new(file)).with_context(|| out.display().to_string())?;
            let frames = list_frames(dir)?;
            for (i, p) in frames.iter().enumerate() {
                let bytes = fs::read(p).with_context(|| p.display().to_string())?;
                let (frame, _) = decode_ppm(&bytes).with_context(|| p.display().to_string())?;
                w.write(0, i as u64, &encode_ppm(&frame, Some(&file_name(p)))).with_context(|| out.display().to_string())?;
            }
            w.finish().and_then(|mut w| w.flush()).with_context(|| out.display().to_string())?;
            println!("packed {} frame(s) into {}", frames.len(), out.display());
            Ok(())
        }
        BagCommand::Info { bag: path, json } => {
            let records = read_bag_file(path)?;
            let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
            for r in &records {
                *counts.entry(r.topic_id).or_default() += 1;
            }
            if *json {
                print_json(&serde_json::json!({ "records": records.len(), "topics": counts }))
            } else {
                println!("{} record(s)", records.len());
                for (topic, n) in counts {
                    println!("topic {topic}: {n}");
                }
                Ok(())
            }
        }
        BagCommand::Unpack { bag: path, out, topic } => {
            let records = read_bag_file(path)?;
            let frames = bag::replay_frames(&records, *topic).with_context(|| path.display().to_string())?;
            fs::create_dir_all(out).with_context(|| out.display().to_string())?;
            for (name, frame) in &frames {
                if name.contains(['/', '\\']) || name.starts_with('.') {
                    return Err(io(anyhow!("{}: unsafe frame name `{name}`", path.display())));
                }
                let p = out.join(name);
                fs::write(&p, encode_ppm(frame, Some(name))).with_context(|| p.display().to_string())?;
            }
            println!("unpacked {} frame(s) into {}", frames.len(), out.display());
            Ok(())
        }
    }
}

fn cmd_taxonomy(json: bool, t: &Taxonomy) -> Outcome {
    if json {
        print_json(&t.classes())
    } else {
        print!("{}", t.to_tsv());
        Ok(())
    }
}
