use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use isoform_core::classifier::{ClassifierError, Hyperparams};
use isoform_core::dataset::{exercise_from_path, parse_clip, write_clip, DatasetError, DatasetManifest};
use isoform_core::exercise::ExerciseConfig;
use isoform_core::features::{read_feature_table, write_feature_table, FeatureRow};
use isoform_core::metrics::{summarize, MetricsError};
use isoform_core::pipeline::{
    eval_set, featurize, predict_rows, run_from_clips, segment_clips, split_rows, synth_suite, train, ModelFile,
    NamedClip, PipelineError, PredictionRecord, SuiteSpec, TrainSetup,
};
use isoform_core::pose::SkeletonProfile;
use isoform_core::protocol::{RepMessage, ServerMessage};
use isoform_core::segment::{RepSegment, SegmentRecord};
use isoform_core::service::{LoadedModel, ModelRegistry, Session, SessionOptions};
use isoform_core::synth::{Archetype, SynthError};
use isoform_core::Execution;
use serde::Serialize;

use crate::args::*;
use crate::CliError;

const EXEC: Execution = Execution::Parallel;

struct Ctx {
    pretty: bool,
    seed: u64,
}

impl Ctx {
    fn json<T: Serialize>(&self, value: &T) -> String {
        if self.pretty {
            serde_json::to_string_pretty(value)
        } else {
            serde_json::to_string(value)
        }
        .expect("output serializes")
    }

    fn emit<T: Serialize>(&self, out: &mut dyn Write, value: &T) -> Result<(), CliError> {
        writeln!(out, "{}", self.json(value)).map_err(|e| io_error("stdout", e))
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Ctx {
        pretty: cli.pretty,
        seed: cli.seed,
    };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a, out),
        Command::Segment(a) => segment(&ctx, a, out),
        Command::Featurize(a) => featurize_cmd(a, out),
        Command::Train(a) => train_cmd(&ctx, a, out),
        Command::Eval(a) => eval(&ctx, a, out),
        Command::Serve(a) => serve(&ctx, a, out),
        Command::Replay(a) => replay(&ctx, a, out),
    }
}

fn io_error(what: impl AsRef<Path>, e: std::io::Error) -> CliError {
    CliError::runtime("io", format!("{}: {e}", what.as_ref().display()))
}

fn dataset_error(e: DatasetError) -> CliError {
    let code = match &e {
        DatasetError::SchemaMismatch(_) => "schema_mismatch",
        DatasetError::NonMonotonicTime { .. } => "non_monotonic_time",
        DatasetError::EmptyFile => "empty_file",
        DatasetError::InvalidManifest(_) => "invalid_manifest",
        DatasetError::Io { .. } => "io",
        _ => "dataset",
    };
    CliError::runtime(code, e.to_string())
}

fn pipeline_error(e: PipelineError) -> CliError {
    let code = match &e {
        PipelineError::Synth(SynthError::InvalidSpec(_)) => return CliError::usage("invalid_argument", e.to_string()),
        PipelineError::Classifier(ClassifierError::InsufficientData(_)) => "insufficient_data",
        PipelineError::Classifier(ClassifierError::NonFiniteLoss { .. }) => "non_finite_loss",
        PipelineError::InvalidModel(_) | PipelineError::Classifier(ClassifierError::InvalidModel(_)) => "invalid_model",
        PipelineError::Segment { .. } => "segment",
        PipelineError::Feature { .. } => "feature",
        _ => "pipeline",
    };
    CliError::runtime(code, e.to_string())
}

fn metrics_error(e: MetricsError) -> CliError {
    let code = match e {
        MetricsError::EmptyEvalSet => "empty_eval_set",
        MetricsError::InvalidClass(_) => "invalid_class",
    };
    CliError::runtime(code, e.to_string())
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError::usage("invalid_argument", message)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_error(path, e))
}

/// Runs `f` against the file at `path`, or against `out` when there is none.
fn with_sink(
    path: Option<&Path>,
    out: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut file = create(p)?;
            f(&mut file)?;
            file.flush().map_err(|e| io_error(p, e))
        }
        None => f(out),
    }
}

fn check_fraction(f: Option<f64>) -> Result<(), CliError> {
    match f {
        Some(f) if !(f > 0.0 && f < 1.0) => Err(invalid(format!("--test-fraction must be in (0, 1), got {f}"))),
        _ => Ok(()),
    }
}

fn hyperparams(h: &HyperArgs) -> Result<Hyperparams, CliError> {
    let d = Hyperparams::default();
    let hp = Hyperparams {
        hidden: h.hidden.unwrap_or(d.hidden),
        learning_rate: h.learning_rate.unwrap_or(d.learning_rate),
        momentum: h.momentum.unwrap_or(d.momentum),
        epochs: h.epochs.unwrap_or(d.epochs),
        batch_size: h.batch_size.unwrap_or(d.batch_size),
    };
    if hp.hidden == 0 || hp.epochs == 0 || hp.batch_size == 0 {
        return Err(invalid("--hidden, --epochs and --batch-size must be positive"));
    }
    if !(hp.learning_rate.is_finite() && hp.learning_rate > 0.0) {
        return Err(invalid("--learning-rate must be positive"));
    }
    if !(0.0..1.0).contains(&hp.momentum) {
        return Err(invalid("--momentum must be in [0, 1)"));
    }
    Ok(hp)
}

fn exercise(name: &str) -> Result<ExerciseConfig, CliError> {
    ExerciseConfig::by_name(name).map_err(|e| invalid(e.to_string()))
}

struct Dataset {
    config: ExerciseConfig,
    clips: Vec<NamedClip>,
}

fn load_dataset(manifest_path: &Path) -> Result<Dataset, CliError> {
    let manifest = DatasetManifest::load(manifest_path).map_err(dataset_error)?;
    let config = ExerciseConfig::by_name(&manifest.exercise)
        .map_err(|e| CliError::runtime("unknown_exercise", e.to_string()))?;
    let profile = SkeletonProfile::builtin(&manifest.profile)
        .ok_or_else(|| CliError::runtime("unknown_profile", format!("unknown profile {:?}", manifest.profile)))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let clips = manifest
        .read_clips(root, Arc::new(profile))
        .map_err(dataset_error)?
        .into_iter()
        .map(|(id, clip)| NamedClip { id, clip })
        .collect();
    Ok(Dataset { config, clips })
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_feature_table(BufReader::new(file)).map_err(|e| CliError::runtime("malformed_features", e.to_string()))
}

fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    ModelFile::from_json(&text).map_err(pipeline_error)
}

/// JSON lines from a file, one record per non-empty line.
fn read_lines<T: serde::de::DeserializeOwned>(path: &Path, code: &'static str) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::runtime(code, format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct SynthSummary {
    exercise: String,
    manifest: String,
    clips: usize,
    frames: usize,
}

fn synth(ctx: &Ctx, a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.reps == 0 || a.clips == 0 || a.clips > a.reps {
        return Err(invalid("need --reps >= --clips >= 1"));
    }
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(invalid("--noise must be a non-negative number"));
    }
    if a.classes.is_empty() || a.classes.iter().any(|&c| c > 2) {
        return Err(invalid("--class takes indices 0, 1 or 2"));
    }
    let archetypes: Vec<Archetype> = if a.exercise.iter().any(|e| e == "all") {
        Archetype::ALL.to_vec()
    } else {
        a.exercise
            .iter()
            .map(|e| e.parse::<Archetype>().map_err(|err| invalid(err.to_string())))
            .collect::<Result<_, _>>()?
    };

    let mut summaries = Vec::new();
    for arch in archetypes {
        let spec = SuiteSpec {
            archetype: arch,
            classes: a.classes.clone(),
            reps_per_class: a.reps,
            clips_per_class: a.clips,
            noise_sigma: a.noise,
            hold_ms: a.hold_ms,
            fps: a.fps,
            seed: ctx.seed,
        };
        let (manifest, clips) = synth_suite(&spec, EXEC).map_err(pipeline_error)?;
        let root = a.out.join(arch.id());
        for (entry, c) in manifest.clips.iter().zip(&clips) {
            write_clip(&c.clip, &root.join(&entry.path)).map_err(dataset_error)?;
        }
        manifest.save(&root.join("manifest.json")).map_err(dataset_error)?;
        summaries.push(SynthSummary {
            exercise: arch.id().to_string(),
            manifest: format!("{}/manifest.json", arch.id()),
            clips: clips.len(),
            frames: clips.iter().map(|c| c.clip.len()).sum(),
        });
    }
    ctx.emit(out, &serde_json::json!({ "exercises": summaries }))
}

fn segment(ctx: &Ctx, a: SegmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load_dataset(&a.manifest)?;
    let segments = segment_clips(&ds.clips, &ds.config.signal, &Default::default(), EXEC).map_err(pipeline_error)?;
    with_sink(a.out.as_deref(), out, |w| {
        for (c, reps) in ds.clips.iter().zip(&segments) {
            for r in reps {
                writeln!(w, "{}", serde_json::to_string(&SegmentRecord::new(&c.id, r)).expect("record"))
                    .map_err(|e| io_error("segments", e))?;
            }
        }
        Ok(())
    })?;
    if a.out.is_some() {
        let reps: usize = segments.iter().map(Vec::len).sum();
        ctx.emit(out, &serde_json::json!({ "clips": ds.clips.len(), "reps": reps }))?;
    }
    Ok(())
}

fn featurize_cmd(a: FeaturizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ds = load_dataset(&a.manifest)?;
    let records: Vec<SegmentRecord> = read_lines(&a.segments, "malformed_segments")?;
    let index: HashMap<&str, usize> = ds.clips.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut segments: Vec<Vec<RepSegment>> = vec![Vec::new(); ds.clips.len()];
    for r in &records {
        let i = index
            .get(r.clip.as_str())
            .ok_or_else(|| CliError::runtime("malformed_segments", format!("unknown clip {:?}", r.clip)))?;
        segments[*i].push(r.segment());
    }
    let setup = TrainSetup::new(ds.config);
    let rows = featurize(&ds.clips, &segments, &setup.features, EXEC).map_err(pipeline_error)?;
    with_sink(a.out.as_deref(), out, |w| {
        write_feature_table(&rows, setup.features.dim(), w).map_err(|e| CliError::runtime("io", e.to_string()))
    })
}

fn train_cmd(ctx: &Ctx, a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_fraction(a.test_fraction)?;
    let mut setup = TrainSetup::new(exercise(&a.exercise)?).with_seed(ctx.seed);
    setup.hyperparams = hyperparams(&a.hyper)?;
    let rows = read_rows(&a.features)?;
    let rows = match a.test_fraction {
        Some(f) => split_rows(&rows, f, ctx.seed).0,
        None => rows,
    };
    let model = train(&rows, &setup).map_err(pipeline_error)?;
    write_model(&model, &a.out)?;
    ctx.emit(
        out,
        &serde_json::json!({
            "exercise": model.exercise,
            "rows": rows.len(),
            "epochs": model.training.epoch_loss.len(),
            "final_loss": model.training.epoch_loss.last(),
            "train_accuracy": model.training.train_accuracy,
        }),
    )
}

fn write_model(model: &ModelFile, path: &Path) -> Result<(), CliError> {
    let mut f = create(path)?;
    let text = serde_json::to_string_pretty(model).expect("model serializes");
    writeln!(f, "{text}").and_then(|_| f.flush()).map_err(|e| io_error(path, e))
}

fn eval(ctx: &Ctx, a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_fraction(a.test_fraction)?;
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(invalid("--tau must be in [0, 1]"));
    }
    if !(a.beta.is_finite() && a.beta > 0.0) {
        return Err(invalid("--beta must be positive"));
    }
    let hp = hyperparams(&a.hyper)?;

    let predictions: Vec<PredictionRecord> = if let Some(path) = &a.predictions {
        read_lines(path, "malformed_predictions")?
    } else if a.from_clips {
        let manifest = a.manifest.as_deref().expect("clap requires --manifest");
        let ds = load_dataset(manifest)?;
        let mut setup = TrainSetup::new(ds.config).with_seed(ctx.seed);
        setup.hyperparams = hp;
        let run = run_from_clips(&ds.clips, &setup, a.test_fraction, EXEC).map_err(pipeline_error)?;
        if let Some(p) = &a.model_out {
            write_model(&run.model, p)?;
        }
        run.predictions
    } else {
        let model_path = a
            .model
            .as_deref()
            .ok_or_else(|| invalid("eval needs --predictions, --from-clips, or --model with --features or --manifest"))?;
        let model = read_model(model_path)?;
        let rows = match (&a.features, &a.manifest) {
            (Some(f), _) => read_rows(f)?,
            (None, Some(m)) => {
                let ds = load_dataset(m)?;
                let segments =
                    segment_clips(&ds.clips, &model.signal, &model.segmenter, EXEC).map_err(pipeline_error)?;
                featurize(&ds.clips, &segments, &model.feature_config, EXEC).map_err(pipeline_error)?
            }
            (None, None) => return Err(invalid("--model needs --features or --manifest")),
        };
        let rows = match a.test_fraction {
            Some(f) => split_rows(&rows, f, ctx.seed).1,
            None => rows,
        };
        predict_rows(&model, &rows, EXEC).map_err(pipeline_error)?
    };

    if let Some(p) = &a.predictions_out {
        with_sink(Some(p), out, |w| {
            for r in &predictions {
                writeln!(w, "{}", serde_json::to_string(r).expect("record")).map_err(|e| io_error(p, e))?;
            }
            Ok(())
        })?;
    }
    let set = eval_set(&predictions).with_tau(a.tau).with_beta(a.beta);
    let summary = summarize(&set).map_err(metrics_error)?;
    ctx.emit(out, &summary)
}

fn serve(ctx: &Ctx, a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let registry = ModelRegistry::load_dir(&a.models).map_err(pipeline_error)?;
    if registry.is_empty() {
        return Err(CliError::runtime(
            "model_missing",
            format!("no model files in {}", a.models.display()),
        ));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::runtime("server", e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.listen)
            .await
            .map_err(|e| CliError::runtime("server", format!("{}: {e}", a.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::runtime("server", e.to_string()))?;
        ctx.emit(
            out,
            &serde_json::json!({ "listening": addr.to_string(), "exercises": registry.exercises() }),
        )?;
        out.flush().map_err(|e| io_error("stdout", e))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::server::serve(listener, Arc::new(registry), shutdown)
            .await
            .map_err(|e| CliError::runtime("server", e.to_string()))
    })
}

fn replay(ctx: &Ctx, a: ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(invalid("--tau must be in [0, 1]"));
    }
    let (registry, exercise) = match (&a.model, &a.models) {
        (Some(path), _) => {
            let model = read_model(path)?;
            let name = model.exercise.clone();
            let mut reg = ModelRegistry::new();
            reg.insert(LoadedModel::new(model).map_err(pipeline_error)?);
            (reg, a.exercise.clone().unwrap_or(name))
        }
        (None, Some(dir)) => {
            let name = a
                .exercise
                .clone()
                .or_else(|| exercise_from_path(&a.csv))
                .ok_or_else(|| invalid("cannot tell the exercise from the CSV path; pass --exercise"))?;
            (ModelRegistry::load_dir(dir).map_err(pipeline_error)?, name)
        }
        (None, None) => return Err(invalid("replay needs --model or --models (or ISOFORM_MODELS_DIR)")),
    };
    let options = SessionOptions {
        level: a.level.into(),
        tau: a.tau,
    };
    let mut session = Session::start("replay", &registry, &exercise, options)
        .map_err(|e| CliError::runtime(e.code(), e.to_string()))?;
    let file = File::open(&a.csv).map_err(|e| io_error(&a.csv, e))?;
    let profile = Arc::new(session.profile().clone());
    let clip = parse_clip(BufReader::new(file), profile, &exercise).map_err(dataset_error)?.clip;

    ctx.emit(out, &ServerMessage::Ack { session: session.id().to_string() })?;
    let mut previous: Option<f64> = None;
    for frame in clip.frames {
        if a.realtime {
            if let Some(p) = previous {
                std::thread::sleep(Duration::from_secs_f64(((frame.time_ms - p) / 1000.0).max(0.0)));
            }
            previous = Some(frame.time_ms);
        }
        let messages: Vec<ServerMessage> = match session.frame(frame) {
            Ok(events) => events.iter().map(|e| ServerMessage::Rep(RepMessage::from(e))).collect(),
            Err(e) => vec![ServerMessage::from(&e)],
        };
        for m in &messages {
            ctx.emit(out, m)?;
        }
        if a.realtime {
            out.flush().map_err(|e| io_error("stdout", e))?;
        }
    }
    let (events, report) = session.end_with_events();
    for e in &events {
        ctx.emit(out, &ServerMessage::Rep(RepMessage::from(e)))?;
    }
    ctx.emit(out, &ServerMessage::Report(report))
}
