//! Fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod bookkeeping;

use alc3_core::classifier::{train, LogisticLearner, LogisticModel, TrainConfig};
use alc3_core::data::{Dataset, Example, Input, Label, LabelSpace};
use alc3_core::engine::{EngineConfig, StopRule, Strategy};
use alc3_core::noise::{self, NoiseKind, NoiseSpec};
use alc3_core::synth::{generate_text, train_test_split, TextSynthConfig};
use alc3_core::{derive_seed, Execution};

pub const NOISE_FRACTION: f64 = 0.3;
pub const DELTA: f64 = 0.8;

/// Learner used by the experiment suites: a smaller hash space for speed, and
/// enough L2 that random noise is largely averaged out.
pub fn learner_config() -> TrainConfig {
    TrainConfig {
        dimension: 1 << 14,
        l2: 1e-3,
        ..Default::default()
    }
}

pub fn learner() -> LogisticLearner {
    LogisticLearner::new(learner_config())
}

/// Clean synthetic text data, split 80/20 into train and test.
pub fn text_split(n_examples: usize, seed: u64) -> (Dataset, Dataset) {
    let d = generate_text(&TextSynthConfig {
        n_examples,
        seed,
        ..Default::default()
    })
    .unwrap();
    train_test_split(&d, 0.2, seed).unwrap()
}

pub fn probe(clean: &Dataset, seed: u64) -> LogisticModel {
    let config = TrainConfig {
        seed: derive_seed(&[seed, 0x70]),
        ..noise::probe_config(&learner_config())
    };
    train(&clean.training_view().unwrap(), clean.label_space(), &config).unwrap()
}

/// `clean` with `fraction` of its labels corrupted by the given noise model.
pub fn noised(clean: &Dataset, kind: NoiseKind, fraction: f64, seed: u64) -> Dataset {
    let spec = NoiseSpec::new(kind, fraction, seed).unwrap();
    match kind {
        NoiseKind::Random => noise::inject_random_noise(clean, spec),
        NoiseKind::LabelConditional => {
            let m = noise::estimate_transition_matrix(&probe(clean, seed), clean, Execution::Parallel).unwrap();
            noise::inject_label_conditional(clean, spec, &m)
        }
        NoiseKind::InputConditional => {
            noise::inject_input_conditional(clean, spec, &probe(clean, seed), Execution::Parallel)
        }
    }
    .unwrap()
    .dataset
}

/// Train/test pair with 30% input-conditional noise on the train side.
pub fn noisy_fixture(n_examples: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let (clean, test) = text_split(n_examples, seed);
    let noisy = noised(&clean, NoiseKind::InputConditional, NOISE_FRACTION, seed);
    (clean, noisy, test)
}

pub fn engine_config(strategy: Strategy, seed: u64, oracle: f64) -> EngineConfig {
    EngineConfig {
        strategy,
        flag_fraction: 0.025,
        delta: DELTA,
        eta0: Some(NOISE_FRACTION),
        max_iterations: 20,
        seed,
        stop_rules: vec![StopRule::CloseToOracle { band: 0.01 }],
        oracle_reference: Some(oracle),
        train: learner_config(),
        ..Default::default()
    }
}

/// Tiny hand-built classification dataset with ground truth; every third label wrong.
pub fn toy_dataset(n: usize, k: usize) -> Dataset {
    let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
    let examples = (0..n)
        .map(|i| {
            let truth = i % k;
            let label = if i % 3 == 0 { (truth + 1) % k } else { truth };
            Example::new(
                i.to_string(),
                Input::Text(format!("w{truth} x{i}")),
                Label::Class(label),
                Some(Label::Class(truth)),
            )
        })
        .collect();
    Dataset::new("toy", LabelSpace::classification(names).unwrap(), examples).unwrap()
}
