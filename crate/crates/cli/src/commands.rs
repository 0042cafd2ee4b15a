use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use alc3_core::annotator::{
    read_transcript, write_transcript, AnnotationQueue, Annotator, OracleAnnotator, QueueAnnotator, RecordingAnnotator,
    ReplayAnnotator, SessionStatus,
};
use alc3_core::classifier::{train, LogisticLearner, TrainConfig};
use alc3_core::data::{load_dataset, load_label_space, save_jsonl, save_label_space, DataFormat, Dataset, LabelSpace};
use alc3_core::engine::artifacts::{self, RunArtifacts};
use alc3_core::engine::{oracle_metrics, Checkpoint, Engine, EngineConfig, RunOutcome, StopReason, Strategy};
use alc3_core::manifest::{DatasetRef, RunManifest, TOOLKIT_VERSION};
use alc3_core::metrics::{data_size_sweep, emit_report, sweep_csv, sweep_m};
use alc3_core::noise::{self, NoiseKind, NoiseSpec};
use alc3_core::synth::{generate_sequences, generate_text, train_test_split, SequenceSynthConfig, TextSynthConfig};
use alc3_core::{derive_seed, Execution};
use tracing::{info, warn};

use crate::config::FileConfig;
use crate::server::{self, AppState, RunInfo};
use crate::{AnnotatorArg, CliError, Command, NoiseArg, RunArgs, SweepMode, TaskArg, EXIT_BUDGET, EXIT_OK};

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
const PROBE_STREAM: u64 = 0x70;

pub fn execute(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Generate {
            task,
            n,
            classes,
            seed,
            out,
            test_fraction,
            test_out,
        } => generate(task, n, classes, seed, &out, test_fraction.zip(test_out)),
        Command::InjectNoise {
            input,
            kind,
            fraction,
            seed,
            out,
            label_space,
        } => inject_noise(&input, kind, fraction, seed, &out, label_space.as_deref()),
        Command::Run(args) => run(args, false),
        Command::Serve(args) => run(args, true),
        Command::Report { run_dir } => {
            let bundle = emit_report(&run_dir)?;
            for f in &bundle.files {
                println!("{}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::Sweep {
            mode,
            dataset,
            values,
            strategies,
            m,
            delta,
            seed,
            config,
            label_space,
            out,
        } => {
            let file = FileConfig::load_or_default(config.as_deref())?;
            let d = load(&dataset, label_space.as_deref(), None)?;
            let learner = LogisticLearner::new(file.engine.train);
            let strategies = if strategies.is_empty() {
                Strategy::ALL.to_vec()
            } else {
                strategies
            };
            let csv = match mode {
                SweepMode::M => {
                    let rows = sweep_m(&d, &learner, &strategies, &values, delta, seed)?;
                    sweep_csv(rows.iter().map(|r| (r, None)))?
                }
                SweepMode::Datasize => {
                    let mut rows = Vec::new();
                    for s in strategies {
                        rows.extend(data_size_sweep(&d, &learner, &values, s, m, delta, seed)?);
                    }
                    sweep_csv(rows.iter().map(|r| (&r.evaluation, Some(r.size))))?
                }
            };
            match out {
                Some(path) => write_file(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load(path: &Path, label_space: Option<&Path>, fallback: Option<&LabelSpace>) -> Result<Dataset, CliError> {
    let space = match label_space {
        Some(p) => Some(load_label_space(p)?),
        None => fallback.cloned(),
    };
    Ok(load_dataset(path, DataFormat::from_path(path), space.as_ref())?)
}

fn generate(
    task: TaskArg,
    n: usize,
    classes: usize,
    seed: u64,
    out: &Path,
    split: Option<(f64, PathBuf)>,
) -> Result<u8, CliError> {
    let d = match task {
        TaskArg::Text => generate_text(&TextSynthConfig {
            n_examples: n,
            n_classes: classes,
            seed,
            ..Default::default()
        })?,
        TaskArg::Sequence => generate_sequences(&SequenceSynthConfig {
            n_sentences: n,
            seed,
            ..Default::default()
        })?,
    };
    match split {
        Some((fraction, test_out)) => {
            let (train, test) = train_test_split(&d, fraction, seed)?;
            save_jsonl(&train, out)?;
            save_jsonl(&test, &test_out)?;
            info!(train = train.len(), test = test.len(), "wrote split dataset");
        }
        None => save_jsonl(&d, out)?,
    }
    save_label_space(d.label_space(), &sidecar(out, "labels.json"))?;
    Ok(EXIT_OK)
}

/// `<path>.<suffix>` next to `path`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn inject_noise(
    input: &Path,
    kind: NoiseArg,
    fraction: f64,
    seed: u64,
    out: &Path,
    label_space: Option<&Path>,
) -> Result<u8, CliError> {
    let d = load(input, label_space, None)?;
    let kind = match kind {
        NoiseArg::Random => NoiseKind::Random,
        NoiseArg::LabelConditional => NoiseKind::LabelConditional,
        NoiseArg::InputConditional => NoiseKind::InputConditional,
    };
    let spec = NoiseSpec::new(kind, fraction, seed)?;
    let noised = match kind {
        NoiseKind::Random => noise::inject_random_noise(&d, spec)?,
        NoiseKind::LabelConditional | NoiseKind::InputConditional => {
            // noise model: a shallow probe trained on the clean labels
            let clean = d.with_ground_truth_labels()?;
            let config = TrainConfig {
                seed: derive_seed(&[seed, PROBE_STREAM]),
                ..noise::probe_config(&TrainConfig::default())
            };
            let probe = train(&clean.training_view()?, clean.label_space(), &config)?;
            if kind == NoiseKind::LabelConditional {
                let matrix = noise::estimate_transition_matrix(&probe, &clean, Execution::default())?;
                noise::inject_label_conditional(&d, spec, &matrix)?
            } else {
                noise::inject_input_conditional(&d, spec, &probe, Execution::default())?
            }
        }
    };
    save_jsonl(&noised.dataset, out)?;
    noised.provenance.save(&sidecar(out, "provenance.json"))?;
    info!(
        corrupted = noised.provenance.corrupted_ids.len(),
        fraction = noised.provenance.achieved_fraction,
        "wrote noised dataset"
    );
    Ok(EXIT_OK)
}

/// File config with command-line overrides applied.
fn resolve(args: &RunArgs) -> Result<FileConfig, CliError> {
    let mut c = FileConfig::load_or_default(args.config.as_deref())?;
    let e = &mut c.engine;
    if let Some(v) = args.strategy {
        e.strategy = v;
    }
    if let Some(v) = args.m {
        e.flag_fraction = v;
    }
    if let Some(v) = args.delta {
        e.delta = v;
    }
    if args.eta0.is_some() {
        e.eta0 = args.eta0;
    }
    if let Some(v) = args.seed {
        e.seed = v;
    }
    if let Some(v) = args.max_iterations {
        e.max_iterations = v;
    }
    if args.oracle_reference.is_some() {
        e.oracle_reference = args.oracle_reference;
    }
    let r = &mut c.run;
    for (slot, v) in [
        (&mut r.dataset, &args.dataset),
        (&mut r.test, &args.test),
        (&mut r.label_space, &args.label_space),
        (&mut r.out, &args.out),
        (&mut r.transcript, &args.transcript),
    ] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
    if let Some(a) = args.annotator {
        r.annotator = Some(format!("{a:?}").to_ascii_lowercase());
    }
    let s = &mut c.serve;
    if let Some(v) = &args.host {
        s.host.clone_from(v);
    }
    if let Some(v) = args.port {
        s.port = v;
    }
    s.tokens.extend(args.tokens.iter().cloned());
    if let Some(v) = args.lease_seconds {
        s.lease_seconds = v;
    }
    if args.console_dir.is_some() {
        s.console_dir.clone_from(&args.console_dir);
    }
    Ok(c)
}

fn annotator_kind(c: &FileConfig, serve: bool) -> Result<AnnotatorArg, CliError> {
    if serve {
        return Ok(AnnotatorArg::Serve);
    }
    match c.run.annotator.as_deref().unwrap_or("oracle") {
        "oracle" => Ok(AnnotatorArg::Oracle),
        "replay" => Ok(AnnotatorArg::Replay),
        "serve" => Ok(AnnotatorArg::Serve),
        other => Err(CliError::Usage(format!(
            "unknown annotator {other:?} (expected oracle, replay or serve)"
        ))),
    }
}

fn run(args: RunArgs, serve: bool) -> Result<u8, CliError> {
    let c = resolve(&args)?;
    let kind = annotator_kind(&c, serve)?;
    let out = c
        .run
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let checkpoint_path = out.join(artifacts::CHECKPOINT_FILE);

    let mut engine = if args.resume && checkpoint_path.exists() {
        let checkpoint = Checkpoint::load(&checkpoint_path)?;
        if args.config.is_some() || args.strategy.is_some() || args.m.is_some() {
            warn!("resuming: engine settings come from the checkpoint, overrides ignored");
        }
        let learner = LogisticLearner::new(checkpoint.config.train.clone());
        info!(iterations = checkpoint.history.len(), "resuming from checkpoint");
        Engine::resume(checkpoint, learner)?.with_artifacts(RunArtifacts::create(&out)?)
    } else {
        let dataset_path = c
            .run
            .dataset
            .clone()
            .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
        let test_path = c
            .run
            .test
            .clone()
            .ok_or_else(|| CliError::Usage("--test is required".into()))?;
        let d = load(&dataset_path, c.run.label_space.as_deref(), None)?;
        let test = load(&test_path, None, Some(d.label_space()))?;
        let mut config = c.engine.clone();
        config.validate(d.len())?;
        let learner = LogisticLearner::new(config.train.clone());
        fill_oracle_reference(&mut config, &learner, &d, &test)?;
        let run_artifacts = RunArtifacts::create(&out)?;
        write_manifest(&run_artifacts, &config, &dataset_path, &d, &test_path, &test, &c, kind)?;
        save_label_space(d.label_space(), &run_artifacts.path(artifacts::LABEL_SPACE_FILE))?;
        Engine::new(config, learner, d, test)?.with_artifacts(run_artifacts)
    };

    // responses from before a resume stay in the transcript
    let transcript_path = out.join(TRANSCRIPT_FILE);
    let mut earlier = if args.resume && transcript_path.exists() {
        read_transcript(&transcript_path).map_err(alc3_core::Error::from)?
    } else {
        Vec::new()
    };

    let (outcome, responses) = match kind {
        AnnotatorArg::Oracle => drive(&mut engine, OracleAnnotator),
        AnnotatorArg::Replay => {
            let path = c
                .run
                .transcript
                .clone()
                .ok_or_else(|| CliError::Usage("--transcript is required with --annotator replay".into()))?;
            let replay = ReplayAnnotator::from_path(&path).map_err(alc3_core::Error::from)?;
            drive(&mut engine, replay)
        }
        AnnotatorArg::Serve => serve_session(&mut engine, &c, args.exit_when_done)?,
    };
    earlier.extend(responses);
    write_transcript(&transcript_path, &earlier).map_err(alc3_core::Error::from)?;
    let outcome = outcome?;
    emit_report(&out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome).expect("outcome serializes")
    );
    Ok(exit_code(&outcome))
}

pub fn exit_code(outcome: &RunOutcome) -> u8 {
    match outcome.stop {
        StopReason::Rule { .. } => EXIT_OK,
        StopReason::MaxIterations | StopReason::Exhausted => EXIT_BUDGET,
    }
}

type Driven = (
    Result<RunOutcome, CliError>,
    Vec<alc3_core::annotator::AnnotationResponse>,
);

fn drive<A: Annotator>(engine: &mut Engine<LogisticLearner>, annotator: A) -> Driven {
    let mut recorder = RecordingAnnotator::new(annotator);
    let outcome = engine.run_until_stop(&mut recorder).map_err(CliError::from);
    (outcome, recorder.into_parts().1)
}

/// The close-to-oracle rule needs a reference; with ground truth available it is
/// measured by training on the ground-truth labels.
fn fill_oracle_reference(
    config: &mut EngineConfig,
    learner: &LogisticLearner,
    d: &Dataset,
    test: &Dataset,
) -> Result<(), CliError> {
    if config.close_to_oracle_band().is_none() || config.oracle_reference.is_some() || !d.has_ground_truth() {
        return Ok(());
    }
    let reference = oracle_metrics(learner, d, test, config.seed)?.primary();
    info!(reference, "measured oracle reference");
    config.oracle_reference = Some(reference);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    run_artifacts: &RunArtifacts,
    config: &EngineConfig,
    dataset_path: &Path,
    d: &Dataset,
    test_path: &Path,
    test: &Dataset,
    c: &FileConfig,
    kind: AnnotatorArg,
) -> Result<(), CliError> {
    let annotator = match kind {
        AnnotatorArg::Oracle => "oracle".to_string(),
        AnnotatorArg::Replay => format!(
            "replay:{}",
            c.run.transcript.as_deref().unwrap_or(Path::new("")).display()
        ),
        AnnotatorArg::Serve => "serve".to_string(),
    };
    let manifest = RunManifest {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: config.clone(),
        dataset: DatasetRef::new(dataset_path.display().to_string(), d)?,
        test: DatasetRef::new(test_path.display().to_string(), test)?,
        annotator,
        artifacts: [
            artifacts::HISTORY_FILE,
            artifacts::CHECKPOINT_FILE,
            artifacts::BASELINE_FILE,
            artifacts::CORRECTED_FILE,
            artifacts::OUTCOME_FILE,
            artifacts::LABEL_SPACE_FILE,
            TRANSCRIPT_FILE,
        ]
        .map(String::from)
        .to_vec(),
    };
    manifest.save(&run_artifacts.path(artifacts::MANIFEST_FILE))?;
    Ok(())
}

/// Runs the engine on a worker thread fed by the HTTP service until the run
/// finishes (and, unless `exit_when_done`, until Ctrl-C).
fn serve_session(
    engine: &mut Engine<LogisticLearner>,
    c: &FileConfig,
    exit_when_done: bool,
) -> Result<Driven, CliError> {
    let queue = Arc::new(AnnotationQueue::new(Duration::from_secs(c.serve.lease_seconds)));
    let info = RunInfo {
        strategy: engine.config().strategy,
        flag_fraction: engine.config().flag_fraction,
        dataset_size: engine.dataset().len(),
        labels: engine.dataset().label_space().names().to_vec(),
    };
    let state = AppState::new(queue.clone(), info, c.serve.tokens.clone());
    let app = server::router(state, c.serve.console_dir.clone());
    let addr = format!("{}:{}", c.serve.host, c.serve.port);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("tokio runtime: {e}")))?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(&addr))
        .map_err(|e| CliError::Data(format!("bind {addr}: {e}")))?;
    info!(%addr, "annotation service listening");
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(async move {
        let shutdown = async move {
            if exit_when_done {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = done_rx => {}
                }
            } else {
                let _ = tokio::signal::ctrl_c().await;
            }
        };
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await
    });

    let driven = std::thread::scope(|scope| {
        let worker = scope.spawn(|| run_live(engine, queue.clone()));
        // Ctrl-C before the run finishes closes the queue so the engine returns
        let closer = queue.clone();
        runtime.spawn(async move {
            let _ = tokio::signal::ctrl_c().await;
            closer.close();
        });
        let driven = worker.join().expect("engine thread panicked");
        let _ = done_tx.send(());
        driven
    });
    if !exit_when_done {
        info!("run finished; serving results until Ctrl-C");
    }
    runtime
        .block_on(server)
        .map_err(|e| CliError::Data(format!("server task: {e}")))?
        .map_err(|e| CliError::Data(format!("server: {e}")))?;
    Ok(driven)
}

/// Drives `engine` with annotations from `queue`, publishing status and history.
pub fn run_live(engine: &mut Engine<LogisticLearner>, queue: Arc<AnnotationQueue>) -> Driven {
    queue.set_label_space(engine.dataset().label_space().clone());
    for r in engine.history() {
        queue.push_record(r.clone());
    }
    queue.set_status(SessionStatus::Training);
    let publisher = queue.clone();
    engine.set_observer(move |r| publisher.push_record(r.clone()));
    let (outcome, responses) = drive(engine, QueueAnnotator::new(queue.clone()));
    match &outcome {
        Ok(o) => queue.set_note(format!("finished: {}", o.stop)),
        Err(e) => queue.set_note(format!("stopped: {e}")),
    }
    queue.set_status(SessionStatus::Finished);
    queue.close();
    (outcome, responses)
}
