//! Per-iteration scoring steps: misannotation scores, auto-correction, flagging,
//! MP precision, noise-fraction tracking and filtering.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::config::Strategy;
use crate::classifier::{Classifier, Prediction};
use crate::data::{id_cmp, Dataset, Label, Source};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisannotationScore {
    pub id: String,
    /// Position in the dataset.
    pub position: usize,
    /// `1 - p(current label | input)`.
    pub score: f64,
}

/// Predicts every example of `dataset`, in dataset order.
pub fn predict_all<C: Classifier + ?Sized>(model: &C, dataset: &Dataset, execution: Execution) -> Vec<Prediction> {
    let inputs: Vec<_> = dataset.examples().iter().map(|e| e.input()).collect();
    model.predict_batch(&inputs, execution)
}

/// Scores every example that is neither human-annotated nor filtered.
pub fn misannotation_scores<C: Classifier + ?Sized>(
    model: &C,
    dataset: &Dataset,
    execution: Execution,
) -> Vec<MisannotationScore> {
    scores_from_predictions(&predict_all(model, dataset, execution), dataset)
}

/// Same as [`misannotation_scores`] from precomputed predictions (one per example).
pub fn scores_from_predictions(predictions: &[Prediction], dataset: &Dataset) -> Vec<MisannotationScore> {
    assert_eq!(predictions.len(), dataset.len(), "one prediction per example");
    dataset
        .examples()
        .iter()
        .zip(predictions)
        .enumerate()
        .filter(|(_, (e, _))| !e.is_human() && !e.is_filtered())
        .map(|(position, (e, p))| MisannotationScore {
            id: e.id().to_string(),
            position,
            score: 1.0 - p.label_prob(e.current_label()),
        })
        .collect()
}

/// Highest score first; ties broken by ascending id (numeric ids numerically).
pub fn rank_order(a: &MisannotationScore, b: &MisannotationScore) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| id_cmp(&a.id, &b.id))
}

/// Replaces the current label of every non-human example with the model's argmax
/// `y*` when `y* != current` and `p(y*|x) > delta`. Returns the number corrected.
pub fn auto_correct<C: Classifier + ?Sized>(
    model: &C,
    dataset: &mut Dataset,
    delta: f64,
    execution: Execution,
) -> usize {
    let preds = predict_all(model, dataset, execution);
    auto_correct_with(&preds, dataset, delta).len()
}

/// [`auto_correct`] from precomputed predictions. Returns the corrected positions.
pub fn auto_correct_with(predictions: &[Prediction], dataset: &mut Dataset, delta: f64) -> Vec<usize> {
    assert_eq!(predictions.len(), dataset.len(), "one prediction per example");
    let changes: Vec<(usize, Label)> = dataset
        .examples()
        .iter()
        .zip(predictions)
        .enumerate()
        .filter(|(_, (e, _))| !e.is_human())
        .filter_map(|(pos, (e, p))| {
            let best = p.argmax_label();
            (best != *e.current_label() && p.label_prob(&best) > delta).then_some((pos, best))
        })
        .collect();
    let positions = changes.iter().map(|(p, _)| *p).collect();
    for (pos, label) in changes {
        dataset.auto_correct_at(pos, label);
    }
    positions
}

/// Result of the flagging step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagSelection {
    /// Flagged ids: by descending score for score-based strategies, dataset order for RLC.
    pub ids: Vec<String>,
    /// `round(M · |D|)`; more than `ids.len()` when eligible examples ran out.
    pub requested: usize,
}

/// Picks `round(M · |D|)` examples for annotation among those that are still
/// `Original` and unfiltered. RLC samples uniformly with `rng`; every other strategy
/// takes the highest misannotation scores.
pub fn flag_for_annotation<R: Rng + ?Sized>(
    scores: &[MisannotationScore],
    dataset: &Dataset,
    strategy: Strategy,
    flag_fraction: f64,
    rng: &mut R,
) -> FlagSelection {
    let requested = (flag_fraction * dataset.len() as f64).round() as usize;
    let mut eligible: Vec<&MisannotationScore> = scores
        .iter()
        .filter(|s| {
            let e = &dataset.examples()[s.position];
            e.source() == Source::Original && !e.is_filtered()
        })
        .collect();
    if eligible.len() < requested {
        warn!(
            requested,
            eligible = eligible.len(),
            "fewer eligible examples than the flag budget"
        );
    }
    let take = requested.min(eligible.len());
    let ids = if strategy.is_random() {
        eligible.sort_by_key(|s| s.position);
        let mut picked: Vec<usize> = index::sample(rng, eligible.len(), take).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| eligible[i].id.clone()).collect()
    } else {
        eligible.sort_by(|a, b| rank_order(a, b));
        eligible.into_iter().take(take).map(|s| s.id.clone()).collect()
    };
    FlagSelection { ids, requested }
}

/// Label of one flagged example before and after annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationOutcome {
    pub before: Label,
    pub after: Label,
}

impl AnnotationOutcome {
    pub fn changed(&self) -> bool {
        self.before != self.after
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpPrecision {
    pub m_flag: usize,
    /// Flagged examples whose label the annotator changed.
    pub m_corr: usize,
    /// `m_corr / m_flag`.
    pub precision: f64,
    /// Changed tokens over all tokens of the flagged sentences (sequence tasks).
    pub token_precision: Option<f64>,
}

pub fn compute_mp_precision(outcomes: &[AnnotationOutcome]) -> Result<MpPrecision> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument(
            "MP precision is undefined when nothing was flagged".into(),
        ));
    }
    let m_flag = outcomes.len();
    let m_corr = outcomes.iter().filter(|o| o.changed()).count();
    let token_precision = match outcomes[0].before {
        Label::Tags(_) => {
            let (changed, total) = outcomes.iter().fold((0usize, 0usize), |(c, t), o| {
                (c + o.before.hamming(&o.after), t + o.before.len())
            });
            Some(if total == 0 { 0.0 } else { changed as f64 / total as f64 })
        }
        Label::Class(_) => None,
    };
    Ok(MpPrecision {
        m_flag,
        m_corr,
        precision: m_corr as f64 / m_flag as f64,
        token_precision,
    })
}

/// `eta_k = eta0 - (sum of m_corr over iterations 1..=k) / |D|`.
pub fn compute_eta(eta0: f64, corrections: &[usize], dataset_len: usize) -> f64 {
    let total: usize = corrections.iter().sum();
    eta0 - total as f64 / dataset_len as f64
}

/// `round(multiplier · m_corr)` when `p_mp > eta_k`, else 0.
pub fn filter_count(m_corr: usize, p_mp: f64, eta_k: f64, multiplier: f64) -> usize {
    if p_mp > eta_k {
        (multiplier * m_corr as f64).round() as usize
    } else {
        0
    }
}

/// Filters the `count` highest-scoring examples that are not human-annotated and
/// not yet filtered. Returns the filtered ids in rank order.
pub fn filter_examples(scores: &[MisannotationScore], dataset: &mut Dataset, count: usize) -> Vec<String> {
    if count == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<&MisannotationScore> = scores.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut out = Vec::with_capacity(count);
    for s in ranked {
        if out.len() == count {
            break;
        }
        if dataset.filter_at(s.position) {
            out.push(s.id.clone());
        }
    }
    if out.len() < count {
        warn!(
            requested = count,
            filtered = out.len(),
            "not enough eligible examples to filter"
        );
    }
    out
}

/// Precision and recall of a flag set against ground truth, measured before the
/// annotator answers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagTruth {
    pub precision: f64,
    pub recall: f64,
}

/// `None` when some example lacks ground truth.
pub fn flag_truth(flagged: &[String], dataset: &Dataset) -> Option<FlagTruth> {
    if !dataset.has_ground_truth() || flagged.is_empty() {
        return None;
    }
    let wrong_flagged = flagged
        .iter()
        .filter(|id| dataset.get(id).and_then(|e| e.is_misannotated()) == Some(true))
        .count();
    let wrong_total = dataset
        .examples()
        .iter()
        .filter(|e| !e.is_human() && e.is_misannotated() == Some(true))
        .count();
    Some(FlagTruth {
        precision: wrong_flagged as f64 / flagged.len() as f64,
        recall: if wrong_total == 0 {
            1.0
        } else {
            wrong_flagged as f64 / wrong_total as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Distribution;
    use crate::data::{Example, Input, LabelSpace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize) -> Dataset {
        let space = LabelSpace::classification(["a", "b", "c"]).unwrap();
        let ex = (0..n)
            .map(|i| {
                Example::new(
                    i.to_string(),
                    Input::Text(format!("x{i}")),
                    Label::Class(0),
                    Some(Label::Class(i % 3)),
                )
            })
            .collect();
        Dataset::new("t", space, ex).unwrap()
    }

    fn score(id: &str, position: usize, score: f64) -> MisannotationScore {
        MisannotationScore {
            id: id.into(),
            position,
            score,
        }
    }

    #[test]
    fn top_m_with_numeric_tie_break() {
        let d = dataset(12);
        // round(0.25 * 12) = 3; ids 2, 10 and 7 tie on 0.9 and 10 > 7 > 2 numerically
        let scores: Vec<_> = (0..12)
            .map(|i| {
                score(
                    &i.to_string(),
                    i,
                    if matches!(i, 2 | 7 | 10 | 11) {
                        0.9
                    } else {
                        0.1 * (i % 5) as f64
                    },
                )
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sel = flag_for_annotation(&scores, &d, Strategy::Alc, 0.25, &mut rng);
        assert_eq!(sel.requested, 3);
        assert_eq!(sel.ids, vec!["2", "7", "10"]);
    }

    #[test]
    fn rlc_is_uniform_and_seeded() {
        let d = dataset(40);
        let scores: Vec<_> = (0..40).map(|i| score(&i.to_string(), i, 0.0)).collect();
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            flag_for_annotation(&scores, &d, Strategy::Rlc, 0.1, &mut rng).ids
        };
        assert_eq!(pick(3), pick(3));
        assert_eq!(pick(3).len(), 4);
        assert_ne!(pick(3), pick(4));
    }

    #[test]
    fn flags_skip_auto_corrected_and_filtered() {
        let mut d = dataset(10);
        d.auto_correct_at(0, Label::Class(1));
        assert!(d.filter_at(1));
        d.apply_annotation("2", Label::Class(2), false).unwrap();
        let scores: Vec<_> = (0..10)
            .map(|i| score(&i.to_string(), i, 1.0 - i as f64 / 10.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sel = flag_for_annotation(&scores, &d, Strategy::Alc3, 0.3, &mut rng);
        assert_eq!(sel.ids, vec!["3", "4", "5"]);
    }

    #[test]
    fn exhausted_pool_flags_what_remains() {
        let mut d = dataset(4);
        for id in ["0", "1", "2"] {
            d.apply_annotation(id, Label::Class(0), false).unwrap();
        }
        let scores = vec![score("3", 3, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sel = flag_for_annotation(&scores, &d, Strategy::Alc, 0.5, &mut rng);
        assert_eq!(sel.requested, 2);
        assert_eq!(sel.ids, vec!["3"]);
    }

    #[test]
    fn mp_precision_formula() {
        let o = |b: usize, a: usize| AnnotationOutcome {
            before: Label::Class(b),
            after: Label::Class(a),
        };
        let outcomes: Vec<_> = (0..20).map(|i| if i < 13 { o(0, 1) } else { o(1, 1) }).collect();
        let mp = compute_mp_precision(&outcomes).unwrap();
        assert_eq!((mp.m_flag, mp.m_corr), (20, 13));
        assert_eq!(mp.precision, 0.65);
        assert_eq!(mp.token_precision, None);
        assert!(compute_mp_precision(&[]).is_err());
    }

    #[test]
    fn token_mp_precision() {
        let outcomes = vec![
            AnnotationOutcome {
                before: Label::Tags(vec![0, 1, 1, 0]),
                after: Label::Tags(vec![0, 2, 1, 0]),
            },
            AnnotationOutcome {
                before: Label::Tags(vec![1, 1]),
                after: Label::Tags(vec![1, 1]),
            },
        ];
        let mp = compute_mp_precision(&outcomes).unwrap();
        assert_eq!(mp.precision, 0.5);
        assert_eq!(mp.token_precision, Some(1.0 / 6.0));
    }

    #[test]
    fn eta_and_filter_gate() {
        let eta = compute_eta(0.30, &[0], 2000);
        assert_eq!(eta, 0.30);
        assert_eq!(filter_count(13, 0.65, eta, 3.0), 39);
        assert_eq!(filter_count(13, 0.30, 0.30, 3.0), 0, "gate is strict");
        assert_eq!(filter_count(13, 0.2, eta, 3.0), 0);
        assert!((compute_eta(0.3, &[13, 7], 2000) - 0.29).abs() < 1e-15);
    }

    #[test]
    fn filtering_takes_highest_scores_and_skips_humans() {
        let mut d = dataset(8);
        d.apply_annotation("0", Label::Class(1), false).unwrap();
        let scores: Vec<_> = (1..8).map(|i| score(&i.to_string(), i, i as f64 / 10.0)).collect();
        let mut all = scores.clone();
        all.push(score("0", 0, 0.99));
        let out = filter_examples(&all, &mut d, 3);
        assert_eq!(out, vec!["7", "6", "5"]);
        assert!(!d.get("0").unwrap().is_filtered());
        assert_eq!(d.filtered_count(), 3);
    }

    #[test]
    fn auto_correction_threshold_is_strict() {
        let mut d = dataset(3);
        let preds = vec![
            Prediction::Single(Distribution::new(vec![0.05, 0.95, 0.0])),
            Prediction::Single(Distribution::new(vec![0.1, 0.9, 0.0])),
            Prediction::Single(Distribution::new(vec![0.97, 0.03, 0.0])),
        ];
        let changed = auto_correct_with(&preds, &mut d, 0.9);
        assert_eq!(changed, vec![0]);
        assert_eq!(d.get("0").unwrap().source(), Source::AutoCorrected);
        assert_eq!(d.get("0").unwrap().current_label(), &Label::Class(1));
        assert_eq!(d.get("1").unwrap().source(), Source::Original);
    }

    #[test]
    fn auto_correction_never_touches_humans() {
        let mut d = dataset(1);
        d.apply_annotation("0", Label::Class(2), false).unwrap();
        let preds = vec![Prediction::Single(Distribution::new(vec![0.0, 1.0, 0.0]))];
        assert!(auto_correct_with(&preds, &mut d, 0.9).is_empty());
        assert_eq!(d.get("0").unwrap().current_label(), &Label::Class(2));
    }

    #[test]
    fn scores_exclude_humans_and_filtered() {
        let mut d = dataset(4);
        d.apply_annotation("1", Label::Class(0), false).unwrap();
        d.filter_at(2);
        let preds: Vec<_> = (0..4)
            .map(|_| Prediction::Single(Distribution::new(vec![0.2, 0.5, 0.3])))
            .collect();
        let s = scores_from_predictions(&preds, &d);
        assert_eq!(s.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), vec!["0", "3"]);
        assert!((s[0].score - 0.8).abs() < 1e-15);
    }
}
