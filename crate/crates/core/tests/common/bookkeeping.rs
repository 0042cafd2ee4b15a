//! Random operation sequences over the dataset bookkeeping, checked step by step.

use std::collections::{HashMap, HashSet};

use alc3_core::classifier::{Distribution, Prediction};
use alc3_core::data::{Dataset, Label, Source};
use alc3_core::engine::{
    auto_correct_with, compute_eta, compute_mp_precision, filter_count, filter_examples, flag_for_annotation,
    scores_from_predictions, AnnotationOutcome, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! ensure {
    ($cond:expr) => {
        if !$cond {
            return Err(format!("{} failed at {}:{}", stringify!($cond), file!(), line!()));
        }
    };
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

macro_rules! ensure_eq {
    ($a:expr, $b:expr) => {
        match (&$a, &$b) {
            (a, b) if a != b => {
                return Err(format!(
                    "{} != {} ({:?} vs {:?}) at line {}",
                    stringify!($a),
                    stringify!($b),
                    a,
                    b,
                    line!()
                ));
            }
            _ => {}
        }
    };
}

fn random_predictions(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Prediction> {
    (0..n)
        .map(|_| {
            // peaked distributions so auto-correction fires at realistic rates
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(4)).collect();
            let total: f64 = raw.iter().sum();
            Prediction::Single(Distribution::new(raw.iter().map(|r| r / total).collect()))
        })
        .collect()
}

fn labels(d: &Dataset) -> Vec<Label> {
    d.examples().iter().map(|e| e.current_label().clone()).collect()
}

pub fn check_sequence(
    seed: u64,
    n: usize,
    k: usize,
    strategy: Strategy,
    m: f64,
    iterations: usize,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = super::toy_dataset(n, k);
    let requested = (m * n as f64).round() as usize;
    let mut human: HashMap<String, Label> = HashMap::new();
    let mut ever_flagged: HashSet<String> = HashSet::new();
    let mut corrections = Vec::new();
    let mut annotated_total = 0usize;
    let mut short = false;

    for iteration in 1..=iterations {
        // reset idempotence
        d.reset_ephemeral();
        let once = d.clone();
        ensure_eq!(d.reset_ephemeral(), 0);
        ensure_eq!(&d, &once);
        for e in d.examples() {
            ensure!(e.source() != Source::AutoCorrected && !e.is_filtered());
        }

        let preds = random_predictions(&mut rng, n, k);
        if strategy.auto_corrects() {
            let delta = rng.gen_range(0.3..0.95);
            auto_correct_with(&preds, &mut d, delta);
        }
        let scores = scores_from_predictions(&preds, &d);
        let flags = flag_for_annotation(&scores, &d, strategy, m, &mut rng);

        // flag-set disjointness: eligible only, no repeats, never flagged before
        let unique: HashSet<&String> = flags.ids.iter().collect();
        ensure_eq!(unique.len(), flags.ids.len());
        for id in &flags.ids {
            let e = d.get(id).unwrap();
            ensure_eq!(e.source(), Source::Original);
            ensure!(!e.is_filtered());
            ensure!(ever_flagged.insert(id.clone()), "{} flagged twice", id);
        }
        let eligible = d
            .examples()
            .iter()
            .filter(|e| e.source() == Source::Original && !e.is_filtered())
            .count();
        ensure_eq!(flags.ids.len(), requested.min(eligible));
        short |= eligible < requested;

        let mut outcomes = Vec::new();
        for id in &flags.ids {
            let before = d.get(id).unwrap().current_label().clone();
            let after = if rng.gen_bool(0.5) {
                d.get(id).unwrap().ground_truth().unwrap().clone()
            } else {
                Label::Class(rng.gen_range(0..k))
            };
            d.apply_annotation(id, after.clone(), false).unwrap();
            human.insert(id.clone(), after.clone());
            outcomes.push(AnnotationOutcome { before, after });
        }
        annotated_total += flags.ids.len();

        if !outcomes.is_empty() {
            let mp = compute_mp_precision(&outcomes).unwrap();
            corrections.push(mp.m_corr);
            let eta = compute_eta(0.3, &corrections, n);
            let count = filter_count(mp.m_corr, mp.precision, eta, 3.0);
            // filter gate fires exactly when p_MP > eta_k
            ensure_eq!(count > 0, mp.precision > eta && mp.m_corr > 0);
            if strategy.filters() {
                let rescored = scores_from_predictions(&preds, &d);
                for id in filter_examples(&rescored, &mut d, count) {
                    ensure!(!d.get(&id).unwrap().is_human());
                }
            }
        }

        // a re-annotation attempt without override is refused
        if let Some(id) = human.keys().next().cloned() {
            ensure!(d.apply_annotation(&id, Label::Class(0), false).is_err());
        }

        // human-label immortality
        for (id, label) in &human {
            let e = d.get(id).unwrap();
            ensure_eq!(e.source(), Source::HumanAnnotated);
            ensure_eq!(e.current_label(), label);
            ensure!(!e.is_filtered());
        }

        // budget accounting
        let humans = d.examples().iter().filter(|e| e.is_human()).count();
        ensure_eq!(humans, annotated_total);
        // k * round(M |D|) whenever no iteration ran out of eligible examples
        if !short {
            ensure_eq!(annotated_total, requested * iteration);
        }
    }

    // the final reset keeps every human label
    let before = labels(&d);
    d.reset_ephemeral();
    for (e, old) in d.examples().iter().zip(before) {
        if e.is_human() {
            ensure_eq!(e.current_label(), &old);
        } else {
            ensure_eq!(e.current_label(), e.original_label());
        }
    }
    Ok(())
}
