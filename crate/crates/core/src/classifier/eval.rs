use serde::{Deserialize, Serialize};

use super::model::Classifier;
use crate::data::{Dataset, Label, LabelSpace, TaskKind};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Held-out evaluation metrics.
///
/// For sequence tasks `accuracy` and `macro_f1` are computed over tokens, and the
/// token-level fields are micro-averaged over non-outside tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_f1: Option<f64>,
}

impl Metrics {
    /// Metric used for the close-to-oracle band: token F1 for sequence tasks, else accuracy.
    pub fn primary(&self) -> f64 {
        self.token_f1.unwrap_or(self.accuracy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Predicts every test example and scores against ground truth (or the label when
/// the test record has no separate ground truth).
pub fn evaluate<C: Classifier + ?Sized>(model: &C, test: &Dataset, execution: Execution) -> Result<Metrics> {
    let inputs: Vec<_> = test.examples().iter().map(|e| e.input()).collect();
    let preds = model.predict_batch(&inputs, execution);
    let pairs: Vec<(Label, Label)> = test
        .examples()
        .iter()
        .zip(preds)
        .map(|(e, p)| (e.ground_truth().unwrap_or(e.current_label()).clone(), p.argmax_label()))
        .collect();
    score_labels(test.label_space(), &pairs)
}

/// Scores `(truth, predicted)` pairs.
pub fn score_labels(space: &LabelSpace, pairs: &[(Label, Label)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let units: Vec<(usize, usize)> = pairs
        .iter()
        .flat_map(|(t, p)| match (t, p) {
            (Label::Class(a), Label::Class(b)) => vec![(*a, *b)],
            (Label::Tags(a), Label::Tags(b)) => a.iter().copied().zip(b.iter().copied()).collect(),
            _ => Vec::new(),
        })
        .collect();
    if units.is_empty() {
        return Err(Error::InvalidArgument("no scorable labels in test set".into()));
    }
    let counts = per_class_counts(space.len(), &units);
    let correct = units.iter().filter(|(t, p)| t == p).count();
    let active: Vec<_> = counts.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).collect();
    let macro_f1 = active.iter().map(|c| c.f1()).sum::<f64>() / active.len().max(1) as f64;
    let mut metrics = Metrics {
        accuracy: correct as f64 / units.len() as f64,
        macro_f1,
        token_precision: None,
        token_recall: None,
        token_f1: None,
    };
    if space.kind() == TaskKind::SequenceLabeling {
        let outside = space.outside_index();
        let entity = |t: usize| Some(t) != outside;
        let mut c = ClassCounts::default();
        for &(t, p) in &units {
            if t == p {
                c.tp += usize::from(entity(t));
            } else {
                c.fp += usize::from(entity(p));
                c.fn_ += usize::from(entity(t));
            }
        }
        metrics.token_precision = Some(c.precision());
        metrics.token_recall = Some(c.recall());
        metrics.token_f1 = Some(c.f1());
    }
    Ok(metrics)
}

/// One-vs-rest TP/FP/FN per class.
pub fn per_class_counts(n_classes: usize, units: &[(usize, usize)]) -> Vec<ClassCounts> {
    let mut counts = vec![ClassCounts::default(); n_classes];
    for &(t, p) in units {
        if t == p {
            counts[t].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    counts
}
