use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Per-class probabilities for one input (or one token).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps probabilities that already sum to one.
    pub fn new(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self(probs)
    }

    /// Numerically stable softmax of raw scores.
    pub fn softmax(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Model output for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Single(Distribution),
    Tokens(Vec<Distribution>),
}

impl Prediction {
    /// `p(label | input)`; for sequences the geometric mean over tokens.
    pub fn label_prob(&self, label: &Label) -> f64 {
        match (self, label) {
            (Prediction::Single(d), Label::Class(c)) => d.prob(*c),
            (Prediction::Tokens(ds), Label::Tags(tags)) => {
                let probs: Vec<f64> = ds.iter().zip(tags).map(|(d, &t)| d.prob(t)).collect();
                sequence_label_prob(&probs).unwrap_or(1.0)
            }
            _ => panic!("prediction shape does not match label shape"),
        }
    }

    /// Argmax label (`y*`).
    pub fn argmax_label(&self) -> Label {
        match self {
            Prediction::Single(d) => Label::Class(d.argmax()),
            Prediction::Tokens(ds) => Label::Tags(ds.iter().map(Distribution::argmax).collect()),
        }
    }

    /// `p(y* | input)`.
    pub fn argmax_prob(&self) -> f64 {
        self.label_prob(&self.argmax_label())
    }

    /// Per-token probability of each token's label in `label`.
    pub fn token_probs(&self, label: &Label) -> Vec<f64> {
        match (self, label) {
            (Prediction::Single(d), Label::Class(c)) => vec![d.prob(*c)],
            (Prediction::Tokens(ds), Label::Tags(tags)) => ds.iter().zip(tags).map(|(d, &t)| d.prob(t)).collect(),
            _ => panic!("prediction shape does not match label shape"),
        }
    }
}

/// Sentence-level label probability: geometric mean `(∏ p_j)^(1/L)` of the
/// per-token probabilities of the sentence's labels.
pub fn sequence_label_prob(token_probs: &[f64]) -> Result<f64> {
    if token_probs.is_empty() {
        return Err(Error::InvalidArgument("token probability list is empty".into()));
    }
    if let Some(p) = token_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("token probability {p} outside [0, 1]")));
    }
    if token_probs.contains(&0.0) {
        return Ok(0.0);
    }
    let mean_log = token_probs.iter().map(|p| p.ln()).sum::<f64>() / token_probs.len() as f64;
    // exp(ln p) can overshoot the bounds by an ulp
    let lo = token_probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = token_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(mean_log.exp().clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn geometric_mean_examples() {
        assert_eq!(sequence_label_prob(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((sequence_label_prob(&[0.25]).unwrap() - 0.25).abs() < 1e-15);
        let g = sequence_label_prob(&[0.9, 0.8, 0.7]).unwrap();
        assert!((g - 0.504f64.powf(1.0 / 3.0)).abs() < 1e-9);
        assert!((g - 0.795_811_9).abs() < 1e-6);
        assert!(sequence_label_prob(&[]).is_err());
        assert!(sequence_label_prob(&[1.2]).is_err());
        assert_eq!(sequence_label_prob(&[0.5, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        let d = Distribution::new(vec![0.4, 0.4, 0.2]);
        assert_eq!(d.argmax(), 0);
        let d = Distribution::new(vec![0.2, 0.4, 0.4]);
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn softmax_normalizes_extremes() {
        let d = Distribution::softmax(&[1000.0, -1000.0, 0.0]);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.argmax(), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(scores in proptest::collection::vec(-50.0f64..50.0, 2..20)) {
            let d = Distribution::softmax(&scores);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
