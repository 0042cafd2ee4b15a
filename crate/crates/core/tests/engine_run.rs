mod common;

use std::fs;

use alc3_core::annotator::{
    oracle_annotate, read_transcript, write_transcript, AnnotationResponse, OracleAnnotator, RecordingAnnotator,
    ReplayAnnotator,
};
use alc3_core::data::{Dataset, LabelValue};
use alc3_core::engine::artifacts::{self, RunArtifacts};
use alc3_core::engine::{oracle_metrics, Checkpoint, Engine, EngineConfig, StopReason, StopRule, Strategy};
use alc3_core::metrics::emit_report;
use alc3_core::synth::{corrupt_sequences, generate_sequences, train_test_split, SequenceSynthConfig};
use alc3_core::Error;
use common::{engine_config, learner, noisy_fixture};

fn small_fixture(seed: u64) -> (Dataset, Dataset, f64) {
    let (clean, noisy, test) = noisy_fixture(2000, seed);
    let oracle = oracle_metrics(&learner(), &clean, &test, seed).unwrap().accuracy;
    (noisy, test, oracle)
}

fn capped(strategy: Strategy, seed: u64, oracle: f64, max_iterations: usize) -> EngineConfig {
    EngineConfig {
        max_iterations,
        ..engine_config(strategy, seed, oracle)
    }
}

#[test]
fn alc3_run_writes_consistent_artifacts() {
    let (noisy, test, oracle) = small_fixture(1);
    let dir = tempfile::tempdir().unwrap();
    let n = noisy.len();
    let mut engine = Engine::new(capped(Strategy::Alc3, 1, oracle, 6), learner(), noisy, test)
        .unwrap()
        .with_artifacts(RunArtifacts::create(dir.path()).unwrap());
    let outcome = engine.run_until_stop(&mut OracleAnnotator).unwrap();
    let history = engine.history();
    assert_eq!(outcome.iterations, history.len());
    assert!(outcome.baseline.is_some());

    let per_iteration = (0.025 * n as f64).round() as usize;
    for (i, r) in history.iter().enumerate() {
        let k = i + 1;
        assert_eq!(r.iteration, k);
        assert_eq!(r.m_flag, per_iteration);
        assert_eq!(r.cumulative_annotated, k * per_iteration);
        assert!((r.cumulative_annotated_fraction - (k * per_iteration) as f64 / n as f64).abs() < 1e-15);
        assert!((r.p_mp - r.m_corr as f64 / r.m_flag as f64).abs() < 1e-15);
        // filter gate
        assert_eq!(r.m_filter > 0, r.p_mp > r.eta_k && r.m_corr > 0);
        assert!(dir.path().join(artifacts::iteration_file(k)).exists());
        let flags = fs::read_to_string(dir.path().join(artifacts::flags_file(k))).unwrap();
        assert_eq!(flags.lines().count(), r.m_flag);
    }
    // eta recurrence
    let mut eta = 0.3;
    for r in history {
        eta -= r.m_corr as f64 / n as f64;
        assert!((r.eta_k - eta).abs() < 1e-12);
    }
    for name in [
        artifacts::HISTORY_FILE,
        artifacts::CHECKPOINT_FILE,
        artifacts::BASELINE_FILE,
        artifacts::CORRECTED_FILE,
        artifacts::OUTCOME_FILE,
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let csv = fs::read_to_string(dir.path().join(artifacts::HISTORY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), history.len() + 1);
}

#[test]
fn human_labels_survive_every_later_iteration() {
    let (noisy, test, oracle) = small_fixture(2);
    let mut engine = Engine::new(capped(Strategy::Alc3, 2, oracle, 5), learner(), noisy, test).unwrap();
    let mut seen: Vec<(String, alc3_core::data::Label)> = Vec::new();
    let mut flagged = std::collections::HashSet::new();
    while let Some(requests) = engine.begin_iteration().unwrap() {
        let requests = requests.to_vec();
        for r in &requests {
            assert!(flagged.insert(r.id.clone()), "{} flagged twice", r.id);
        }
        let responses = oracle_annotate(&requests, engine.dataset()).unwrap();
        engine.complete_iteration(&responses).unwrap();
        for r in &requests {
            seen.push((
                r.id.clone(),
                engine.dataset().get(&r.id).unwrap().current_label().clone(),
            ));
        }
        for (id, label) in &seen {
            let e = engine.dataset().get(id).unwrap();
            assert!(e.is_human());
            assert_eq!(e.current_label(), label);
        }
        if engine.history().len() == 5 {
            break;
        }
    }
}

#[test]
fn replayed_transcript_reproduces_history_bytes() {
    let (noisy, test, oracle) = small_fixture(3);
    let config = capped(Strategy::Alc3, 3, oracle, 5);
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();

    let mut recorder = RecordingAnnotator::new(OracleAnnotator);
    let mut engine = Engine::new(config.clone(), learner(), noisy.clone(), test.clone())
        .unwrap()
        .with_artifacts(RunArtifacts::create(first.path()).unwrap());
    engine.run_until_stop(&mut recorder).unwrap();
    let transcript = first.path().join("transcript.jsonl");
    write_transcript(&transcript, recorder.responses()).unwrap();
    let recorded = engine.into_dataset();

    let mut replay = ReplayAnnotator::new(read_transcript(&transcript).unwrap());
    let mut again = Engine::new(config, learner(), noisy, test)
        .unwrap()
        .with_artifacts(RunArtifacts::create(second.path()).unwrap());
    again.run_until_stop(&mut replay).unwrap();

    let a = fs::read(first.path().join(artifacts::HISTORY_FILE)).unwrap();
    let b = fs::read(second.path().join(artifacts::HISTORY_FILE)).unwrap();
    assert_eq!(a, b);
    assert_eq!(again.into_dataset(), recorded);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let (noisy, test, oracle) = small_fixture(4);
    let config = capped(Strategy::Alc3, 4, oracle, 6);

    let mut straight = Engine::new(config.clone(), learner(), noisy.clone(), test.clone()).unwrap();
    let expected = straight.run_until_stop(&mut OracleAnnotator).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut partial = Engine::new(config, learner(), noisy, test).unwrap();
    for _ in 0..2 {
        partial.run_iteration(&mut OracleAnnotator).unwrap().unwrap();
    }
    let path = dir.path().join("checkpoint.json");
    partial.checkpoint().save(&path).unwrap();
    drop(partial);

    let mut resumed = Engine::resume(Checkpoint::load(&path).unwrap(), learner()).unwrap();
    let outcome = resumed.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(outcome, expected);
    assert_eq!(resumed.history(), straight.history());
    assert_eq!(resumed.dataset(), straight.dataset());
}

#[test]
fn resume_with_pending_iteration_hands_out_same_requests() {
    let (noisy, test, oracle) = small_fixture(5);
    let config = capped(Strategy::Dalc, 5, oracle, 3);
    let mut straight = Engine::new(config.clone(), learner(), noisy.clone(), test.clone()).unwrap();
    straight.run_until_stop(&mut OracleAnnotator).unwrap();

    let mut engine = Engine::new(config, learner(), noisy, test).unwrap();
    engine.run_iteration(&mut OracleAnnotator).unwrap();
    let requests = engine.begin_iteration().unwrap().unwrap().to_vec();
    // idempotent while pending
    assert_eq!(engine.begin_iteration().unwrap().unwrap(), requests.as_slice());
    let checkpoint = engine.checkpoint();
    let mut resumed = Engine::resume(checkpoint, learner()).unwrap();
    assert_eq!(resumed.begin_iteration().unwrap().unwrap(), requests.as_slice());
    resumed.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(resumed.history(), straight.history());
    assert_eq!(resumed.dataset(), straight.dataset());
}

#[test]
fn invalid_response_batches_change_nothing() {
    let (noisy, test, oracle) = small_fixture(6);
    let mut engine = Engine::new(capped(Strategy::Alc, 6, oracle, 3), learner(), noisy, test).unwrap();
    let requests = engine.begin_iteration().unwrap().unwrap().to_vec();
    let good = oracle_annotate(&requests, engine.dataset()).unwrap();
    let before = engine.dataset().clone();

    let mut duplicate = good.clone();
    duplicate.push(good[0].clone());
    let missing = good[1..].to_vec();
    let mut extra = good.clone();
    extra.push(AnnotationResponse {
        id: "no-such-id".into(),
        ..good[0].clone()
    });
    let mut bad_label = good.clone();
    bad_label[3].label = LabelValue::One("not-a-class".into());

    for batch in [duplicate, missing, extra] {
        assert!(engine.complete_iteration(&batch).is_err());
        assert_eq!(engine.dataset(), &before);
        assert!(engine.pending().is_some());
    }
    assert!(matches!(
        engine.complete_iteration(&bad_label),
        Err(Error::InvalidLabel { .. })
    ));
    assert_eq!(engine.dataset(), &before);

    let record = engine.complete_iteration(&good).unwrap();
    assert_eq!(record.m_flag, requests.len());
    assert!(engine.pending().is_none());
    assert!(engine.complete_iteration(&good).is_err());
}

#[test]
fn stop_reasons() {
    let (noisy, test, oracle) = small_fixture(7);

    let mut rlc = Engine::new(
        EngineConfig {
            stop_rules: vec![],
            ..capped(Strategy::Rlc, 7, oracle, 2)
        },
        learner(),
        noisy.clone(),
        test.clone(),
    )
    .unwrap();
    let outcome = rlc.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(outcome.stop, StopReason::MaxIterations);
    assert_eq!(outcome.iterations, 2);

    let budget = StopRule::Budget {
        max_annotated_fraction: 0.05,
    };
    let mut alc = Engine::new(
        EngineConfig {
            stop_rules: vec![budget.clone()],
            ..capped(Strategy::Alc, 7, oracle, 10)
        },
        learner(),
        noisy.clone(),
        test.clone(),
    )
    .unwrap();
    let outcome = alc.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(outcome.stop, StopReason::Rule { rule: budget });
    assert_eq!(outcome.iterations, 2);

    // random flagging finds about 30% misannotated, well under this floor
    let floor = StopRule::MpPrecisionFloor { threshold: 0.9 };
    let mut rlc = Engine::new(
        EngineConfig {
            stop_rules: vec![floor.clone()],
            ..capped(Strategy::Rlc, 7, oracle, 10)
        },
        learner(),
        noisy.clone(),
        test.clone(),
    )
    .unwrap();
    let outcome = rlc.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(outcome.stop, StopReason::Rule { rule: floor });
    assert_eq!(outcome.iterations, 1);
    let bad = EngineConfig {
        stop_rules: vec![StopRule::MpPrecisionFloor { threshold: 1.5 }],
        ..capped(Strategy::Alc, 7, oracle, 10)
    };
    assert!(bad.validate(noisy.len()).is_err());

    let mut no_reference = Engine::new(
        EngineConfig {
            oracle_reference: None,
            ..capped(Strategy::Alc, 7, oracle, 10)
        },
        learner(),
        noisy,
        test,
    )
    .unwrap();
    let err = no_reference.run_until_stop(&mut OracleAnnotator).unwrap_err();
    assert!(err.to_string().contains("oracle_reference"), "{err}");
}

#[test]
fn exhausting_the_pool_stops_the_run() {
    let d = common::toy_dataset(40, 2);
    let (train, test) = train_test_split(&d, 0.25, 0).unwrap();
    let config = EngineConfig {
        strategy: Strategy::Alc,
        flag_fraction: 0.4,
        eta0: Some(0.3),
        max_iterations: 10,
        stop_rules: vec![],
        train: common::learner_config(),
        ..Default::default()
    };
    let mut engine = Engine::new(config, learner(), train, test).unwrap();
    let outcome = engine.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(outcome.stop, StopReason::Exhausted);
    assert!(engine.dataset().examples().iter().all(|e| e.is_human()));
    // the last iteration got what was left
    let last = engine.history().last().unwrap();
    assert!(last.m_flag <= last.flag_requested);
}

#[test]
fn report_is_deterministic_and_names_the_stop_rule() {
    let (noisy, test, oracle) = small_fixture(8);
    let dir = tempfile::tempdir().unwrap();
    // loose band so the rule fires quickly
    let config = EngineConfig {
        stop_rules: vec![StopRule::CloseToOracle { band: 0.05 }],
        ..capped(Strategy::Alc3, 8, oracle, 10)
    };
    let mut engine = Engine::new(config, learner(), noisy, test)
        .unwrap()
        .with_artifacts(RunArtifacts::create(dir.path()).unwrap());
    let outcome = engine.run_until_stop(&mut OracleAnnotator).unwrap();
    assert!(outcome.stop.is_rule());

    let first = emit_report(dir.path()).unwrap();
    assert_eq!(first.iterations, outcome.iterations);
    let snapshot: Vec<Vec<u8>> = first.files.iter().map(|p| fs::read(p).unwrap()).collect();
    let second = emit_report(dir.path()).unwrap();
    let again: Vec<Vec<u8>> = second.files.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(snapshot, again);

    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("close_to_oracle"), "{report}");
    let final_metric = format!("{:.4}", outcome.final_eval.unwrap().accuracy);
    assert!(report.contains(&final_metric), "{report}");
    let history_rows = fs::read_to_string(dir.path().join(artifacts::HISTORY_FILE))
        .unwrap()
        .lines()
        .count();
    assert_eq!(history_rows, outcome.iterations + 1);
}

#[test]
fn report_without_records_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_report(dir.path()), Err(Error::MissingArtifact(_))));
}

#[test]
fn sequence_task_reports_token_precision() {
    let clean = generate_sequences(&SequenceSynthConfig {
        n_sentences: 500,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let (train, test) = train_test_split(&clean, 0.2, 3).unwrap();
    let (noisy, corrupted) = corrupt_sequences(&train, 0.3, 3).unwrap();
    assert!(!corrupted.is_empty());
    let oracle = oracle_metrics(&learner(), &train, &test, 3).unwrap();
    assert!(oracle.token_f1.is_some());

    let config = EngineConfig {
        strategy: Strategy::Alc3,
        flag_fraction: 0.05,
        delta: 0.98,
        eta0: Some(0.3),
        max_iterations: 4,
        seed: 3,
        stop_rules: vec![],
        train: common::learner_config(),
        ..Default::default()
    };
    let mut engine = Engine::new(config, learner(), noisy, test).unwrap();
    engine.run_until_stop(&mut OracleAnnotator).unwrap();
    assert_eq!(engine.history().len(), 4);
    for r in engine.history() {
        let token = r.token_p_mp.expect("sequence runs record token precision");
        assert!((0.0..=1.0).contains(&token));
        // a sentence counts as corrected when any token changed
        assert!(token <= r.p_mp + 1e-12);
        assert!(r.eval.token_f1.is_some());
    }
}
