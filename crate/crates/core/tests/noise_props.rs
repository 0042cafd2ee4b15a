mod common;

use std::collections::HashSet;

use alc3_core::data::{Dataset, Example, Input, Label, LabelSpace};
use alc3_core::noise::{self, NoiseKind, NoiseSpec, TransitionMatrix};
use alc3_core::synth::{generate_text, TextSynthConfig};
use alc3_core::Error;
use common::{noised, probe};

fn uniform_dataset(n: usize, k: usize) -> Dataset {
    let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
    let examples = (0..n)
        .map(|i| {
            Example::new(
                format!("e{i}"),
                Input::Text(format!("t{i}")),
                Label::Class(i % k),
                Some(Label::Class(i % k)),
            )
        })
        .collect();
    Dataset::new("u", LabelSpace::classification(names).unwrap(), examples).unwrap()
}

fn changed_ids(clean: &Dataset, noisy: &Dataset) -> Vec<String> {
    clean
        .examples()
        .iter()
        .zip(noisy.examples())
        .filter(|(a, b)| a.current_label() != b.current_label())
        .map(|(a, _)| a.id().to_string())
        .collect()
}

#[test]
fn every_kind_corrupts_exactly_the_target_count() {
    let clean = generate_text(&TextSynthConfig {
        n_examples: 1000,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    for kind in [
        NoiseKind::Random,
        NoiseKind::LabelConditional,
        NoiseKind::InputConditional,
    ] {
        for fraction in [0.0, 0.1, 0.3, 0.45] {
            let a = noised(&clean, kind, fraction, 4);
            let changed = changed_ids(&clean, &a);
            assert_eq!(
                changed.len(),
                (fraction * 1000.0).round() as usize,
                "{kind:?} at {fraction}"
            );
            assert!((a.stats().noise_fraction.unwrap() - fraction).abs() < 1e-12);
            // ground truth and ids untouched
            for (x, y) in clean.examples().iter().zip(a.examples()) {
                assert_eq!(x.id(), y.id());
                assert_eq!(x.ground_truth(), y.ground_truth());
                assert_eq!(x.input(), y.input());
            }
            assert_eq!(a, noised(&clean, kind, fraction, 4), "{kind:?} is not deterministic");
        }
    }
}

#[test]
fn provenance_lists_the_corrupted_examples() {
    let clean = uniform_dataset(500, 4);
    let out = noise::inject_random_noise(&clean, NoiseSpec::new(NoiseKind::Random, 0.2, 1).unwrap()).unwrap();
    assert_eq!(out.provenance.target, 100);
    assert_eq!(out.provenance.achieved_fraction, 0.2);
    let listed: HashSet<_> = out.provenance.corrupted_ids.iter().cloned().collect();
    let actual: HashSet<_> = changed_ids(&clean, &out.dataset).into_iter().collect();
    assert_eq!(listed, actual);
}

#[test]
fn different_seeds_pick_different_examples() {
    let clean = uniform_dataset(1000, 4);
    let a = noise::inject_random_noise(&clean, NoiseSpec::new(NoiseKind::Random, 0.3, 1).unwrap()).unwrap();
    let b = noise::inject_random_noise(&clean, NoiseSpec::new(NoiseKind::Random, 0.3, 2).unwrap()).unwrap();
    assert_ne!(a.provenance.corrupted_ids, b.provenance.corrupted_ids);
}

#[test]
fn random_noise_spreads_over_other_labels() {
    let k = 4;
    let clean = uniform_dataset(20_000, k);
    let out = noise::inject_random_noise(&clean, NoiseSpec::new(NoiseKind::Random, 0.6, 3).unwrap()).unwrap();
    let mut counts = vec![vec![0usize; k]; k];
    for (x, y) in clean.examples().iter().zip(out.dataset.examples()) {
        let (from, to) = (
            x.current_label().as_class().unwrap(),
            y.current_label().as_class().unwrap(),
        );
        if from != to {
            counts[from][to] += 1;
        }
    }
    for (from, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (to, &c) in row.iter().enumerate() {
            if to != from {
                let freq = c as f64 / total as f64;
                assert!((freq - 1.0 / 3.0).abs() < 0.02, "{from}->{to}: {freq}");
            }
        }
    }
}

#[test]
fn label_conditional_flips_follow_the_matrix_rows() {
    let k = 3;
    let matrix = TransitionMatrix::new(vec![vec![0.7, 0.25, 0.05], vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6]]).unwrap();
    let clean = uniform_dataset(20_000, k);
    let out = noise::inject_label_conditional(
        &clean,
        NoiseSpec::new(NoiseKind::LabelConditional, 0.9, 5).unwrap(),
        &matrix,
    )
    .unwrap();
    let mut counts = vec![vec![0usize; k]; k];
    for (x, y) in clean.examples().iter().zip(out.dataset.examples()) {
        let (from, to) = (
            x.current_label().as_class().unwrap(),
            y.current_label().as_class().unwrap(),
        );
        if from != to {
            counts[from][to] += 1;
        }
    }
    let draws: usize = counts.iter().flatten().sum();
    assert_eq!(draws, 18_000);
    for (from, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        let off: f64 = (0..k).filter(|&j| j != from).map(|j| matrix.row(from)[j]).sum();
        for (to, &c) in row.iter().enumerate() {
            if to == from {
                continue;
            }
            let expected = matrix.row(from)[to] / off;
            let freq = c as f64 / total as f64;
            assert!((freq - expected).abs() < 0.02, "{from}->{to}: {freq} vs {expected}");
        }
    }
}

#[test]
fn label_conditional_skips_classes_without_flip_mass() {
    let matrix = TransitionMatrix::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
    let clean = uniform_dataset(100, 2);
    let out = noise::inject_label_conditional(
        &clean,
        NoiseSpec::new(NoiseKind::LabelConditional, 0.3, 0).unwrap(),
        &matrix,
    )
    .unwrap();
    assert!(
        out.dataset
            .examples()
            .iter()
            .filter(|e| e.current_label().as_class() == Some(1))
            .count()
            == 20
    );
    // class 1 has only 50 examples, so 60 flips cannot be reached
    let err = noise::inject_label_conditional(
        &clean,
        NoiseSpec::new(NoiseKind::LabelConditional, 0.6, 0).unwrap(),
        &matrix,
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            Error::NoiseTargetUnreachable {
                achieved: 50,
                target: 60,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn matrix_shape_must_match_label_space() {
    let clean = uniform_dataset(10, 3);
    let spec = NoiseSpec::new(NoiseKind::LabelConditional, 0.3, 0).unwrap();
    assert!(noise::inject_label_conditional(&clean, spec, &TransitionMatrix::identity(2)).is_err());
    assert!(NoiseSpec::new(NoiseKind::Random, 1.0, 0).is_err());
    assert!(TransitionMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
}

/// A token from a class's boundary vocabulary: `z<letters>qb` then a consonant.
fn is_boundary_token(t: &str) -> bool {
    let Some(rest) = t.strip_prefix('z') else { return false };
    let Some(q) = rest.find('q') else { return false };
    let tail = &rest[q + 1..];
    tail.starts_with('b') && tail[1..].chars().next().is_some_and(|c| !"aeiou".contains(c))
}

#[test]
fn input_conditional_noise_concentrates_near_the_boundary() {
    let clean = generate_text(&TextSynthConfig {
        n_examples: 4000,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let noisy = noised(&clean, NoiseKind::InputConditional, 0.3, 21);
    let boundary: Vec<bool> = clean
        .examples()
        .iter()
        .map(|e| match e.input() {
            Input::Text(t) => t.split(' ').any(is_boundary_token),
            _ => unreachable!(),
        })
        .collect();
    let n_boundary = boundary.iter().filter(|b| **b).count();
    assert!((600..1000).contains(&n_boundary), "{n_boundary}");
    let mut flipped = [0usize; 2];
    let mut to_confuser = 0usize;
    for (i, (x, y)) in clean.examples().iter().zip(noisy.examples()).enumerate() {
        if x.current_label() != y.current_label() {
            flipped[usize::from(boundary[i])] += 1;
            let c = x.current_label().as_class().unwrap();
            if y.current_label().as_class() == Some(alc3_core::synth::confuser(c, 8)) {
                to_confuser += 1;
            }
        }
    }
    let rate_boundary = flipped[1] as f64 / n_boundary as f64;
    let rate_interior = flipped[0] as f64 / (boundary.len() - n_boundary) as f64;
    assert!(
        rate_boundary > 2.0 * rate_interior,
        "boundary {rate_boundary} interior {rate_interior}"
    );
    // uniform flips would send 1/7 of them to the paired class
    let share = to_confuser as f64 / (flipped[0] + flipped[1]) as f64;
    assert!(share > 1.5 / 7.0, "confuser share {share}");
}

#[test]
fn estimated_matrix_rows_are_distributions() {
    let (clean, _) = common::text_split(1500, 2);
    let m = noise::estimate_transition_matrix(&probe(&clean, 2), &clean, alc3_core::Execution::Parallel).unwrap();
    assert_eq!(m.len(), 8);
    for c in 0..8 {
        let row = m.row(c);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // the diagonal dominates and the paired class takes the largest off-diagonal share
        let partner = alc3_core::synth::confuser(c, 8);
        let best_off = (0..8)
            .filter(|&j| j != c)
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        assert_eq!(best_off, partner, "row {c}: {row:?}");
    }
}
