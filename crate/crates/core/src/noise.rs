//! Synthetic label-noise injectors for simulation studies.
//!
//! All injectors corrupt the clean (ground-truth) label of the selected examples,
//! leave every other example untouched and preserve ground truth. They are pure
//! functions of `(dataset, spec, model)`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::classifier::{Classifier, Prediction, TrainConfig};
use crate::data::{Dataset, Label, TaskKind};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MAX_PASSES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Random,
    LabelConditional,
    InputConditional,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(NoiseKind::Random),
            "label_conditional" | "label_cond" => Ok(NoiseKind::LabelConditional),
            "input_conditional" | "input_cond" => Ok(NoiseKind::InputConditional),
            _ => Err(Error::config("kind", format!("unknown noise kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Target misannotated fraction in `[0, 1)`.
    pub fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, fraction: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, fraction, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(Error::config(
                "fraction",
                format!("noise fraction must lie in [0, 1), got {}", self.fraction),
            ));
        }
        Ok(())
    }

    /// `round(fraction · n)`.
    pub fn target(&self, n: usize) -> usize {
        (self.fraction * n as f64).round() as usize
    }
}

/// Sidecar written next to a noised dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProvenance {
    pub spec: NoiseSpec,
    pub target: usize,
    pub corrupted_ids: Vec<String>,
    pub achieved_fraction: f64,
}

impl NoiseProvenance {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct Noised {
    pub dataset: Dataset,
    pub provenance: NoiseProvenance,
}

/// Row `c` holds the probabilities of relabeling class `c` as each class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// Validates shape and that every row is a probability distribution.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "transition row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "transition row {i} is not a distribution"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            rows: (0..k)
                .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.rows[c]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Row `c` with the diagonal zeroed and renormalized; `None` if no mass is left.
    pub fn flip_distribution(&self, c: usize) -> Option<Vec<f64>> {
        let off: f64 = self.rows[c]
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != c)
            .map(|(_, p)| p)
            .sum();
        if off <= 0.0 {
            return None;
        }
        Some(
            self.rows[c]
                .iter()
                .enumerate()
                .map(|(j, p)| if j == c { 0.0 } else { p / off })
                .collect(),
        )
    }
}

fn require_classification(d: &Dataset) -> Result<()> {
    if d.kind() != TaskKind::Classification {
        return Err(Error::InvalidArgument(
            "noise injection supports classification datasets only".into(),
        ));
    }
    Ok(())
}

fn clean_labels(d: &Dataset) -> Result<Vec<usize>> {
    d.examples()
        .iter()
        .map(|e| {
            e.ground_truth().and_then(Label::as_class).ok_or_else(|| {
                Error::GroundTruthRequired(format!("noise injection needs ground truth for {:?}", e.id()))
            })
        })
        .collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // float slack: fall back to the last class with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn finish(d: &Dataset, spec: NoiseSpec, target: usize, changes: Vec<(usize, usize)>) -> Result<Noised> {
    let mut out = d.clone();
    let mut ids = Vec::with_capacity(changes.len());
    for &(pos, label) in &changes {
        out.relabel_original_at(pos, Label::Class(label));
        ids.push(out.examples()[pos].id().to_string());
    }
    let achieved_fraction = changes.len() as f64 / d.len() as f64;
    Ok(Noised {
        dataset: out,
        provenance: NoiseProvenance {
            spec,
            target,
            corrupted_ids: ids,
            achieved_fraction,
        },
    })
}

fn target_or_noop(d: &Dataset, spec: &NoiseSpec) -> Result<Option<usize>> {
    spec.validate()?;
    require_classification(d)?;
    let target = spec.target(d.len());
    if target == 0 {
        if spec.fraction > 0.0 {
            warn!(
                fraction = spec.fraction,
                size = d.len(),
                "noise target rounds to zero; dataset unchanged"
            );
        }
        return Ok(None);
    }
    Ok(Some(target))
}

/// Training config for the model that drives label- and input-conditional noise:
/// one short epoch, so probabilities stay soft on examples near a class boundary.
/// A fully trained model is near-certain on its own training data and would spread
/// input-conditional flips almost uniformly.
pub fn probe_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        learning_rate: 0.02,
        ..base.clone()
    }
}

/// Selects `round(fraction · |d|)` examples uniformly and gives each a uniformly
/// random label different from its clean one.
pub fn inject_random_noise(d: &Dataset, spec: NoiseSpec) -> Result<Noised> {
    let Some(target) = target_or_noop(d, &spec)? else {
        return finish(d, spec, 0, Vec::new());
    };
    let clean = clean_labels(d)?;
    let k = d.label_space().len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = rand::seq::index::sample(&mut rng, d.len(), target).into_vec();
    chosen.sort_unstable();
    let changes = chosen
        .into_iter()
        .map(|pos| {
            let c = clean[pos];
            // uniform over the k - 1 other labels
            let mut j = rng.gen_range(0..k - 1);
            if j >= c {
                j += 1;
            }
            (pos, j)
        })
        .collect();
    finish(d, spec, target, changes)
}

/// Row `c` is the mean predicted distribution over examples currently labeled `c`;
/// classes without examples get an identity row.
pub fn estimate_transition_matrix<C: Classifier + ?Sized>(
    model: &C,
    d: &Dataset,
    execution: Execution,
) -> Result<TransitionMatrix> {
    require_classification(d)?;
    let k = d.label_space().len();
    let inputs: Vec<_> = d.examples().iter().map(|e| e.input()).collect();
    let preds = model.predict_batch(&inputs, execution);
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for (e, p) in d.examples().iter().zip(&preds) {
        let (Some(c), Prediction::Single(dist)) = (e.current_label().as_class(), p) else {
            continue;
        };
        counts[c] += 1;
        for (s, q) in sums[c].iter_mut().zip(dist.probs()) {
            *s += q;
        }
    }
    let rows = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (row, n))| {
            if n == 0 {
                (0..k).map(|j| f64::from(u8::from(j == c))).collect()
            } else {
                row.into_iter().map(|s| s / n as f64).collect()
            }
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Walks a seeded random permutation, relabeling each visited example from its
/// clean class's off-diagonal transition row until the target count is reached.
/// Examples whose row has no off-diagonal mass are skipped.
pub fn inject_label_conditional(d: &Dataset, spec: NoiseSpec, matrix: &TransitionMatrix) -> Result<Noised> {
    require_classification(d)?;
    if matrix.len() != d.label_space().len() {
        return Err(Error::InvalidArgument(format!(
            "transition matrix is {0}x{0} but the label space has {1} classes",
            matrix.len(),
            d.label_space().len()
        )));
    }
    let Some(target) = target_or_noop(d, &spec)? else {
        return finish(d, spec, 0, Vec::new());
    };
    let clean = clean_labels(d)?;
    let flips: Vec<Option<Vec<f64>>> = (0..matrix.len()).map(|c| matrix.flip_distribution(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut rng);
    let mut changes = Vec::with_capacity(target);
    let mut skipped = 0usize;
    for pos in order {
        if changes.len() == target {
            break;
        }
        match &flips[clean[pos]] {
            Some(row) => changes.push((pos, sample_index(row, &mut rng))),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!(
            skipped,
            "examples skipped: their class has no off-diagonal transition mass"
        );
    }
    if changes.len() < target {
        return Err(Error::NoiseTargetUnreachable {
            achieved: changes.len(),
            target,
            achieved_fraction: changes.len() as f64 / d.len() as f64,
        });
    }
    changes.sort_unstable();
    finish(d, spec, target, changes)
}

/// Repeatedly walks random permutations; each still-unchanged example draws a label
/// from the model's predicted distribution and keeps it if it differs from the
/// clean label. Stops at the target count, or fails after [`MAX_PASSES`].
pub fn inject_input_conditional<C: Classifier + ?Sized>(
    d: &Dataset,
    spec: NoiseSpec,
    model: &C,
    execution: Execution,
) -> Result<Noised> {
    inject_input_conditional_with_passes(d, spec, model, execution, MAX_PASSES)
}

pub fn inject_input_conditional_with_passes<C: Classifier + ?Sized>(
    d: &Dataset,
    spec: NoiseSpec,
    model: &C,
    execution: Execution,
    max_passes: usize,
) -> Result<Noised> {
    let Some(target) = target_or_noop(d, &spec)? else {
        return finish(d, spec, 0, Vec::new());
    };
    let clean = clean_labels(d)?;
    let inputs: Vec<_> = d.examples().iter().map(|e| e.input()).collect();
    let dists: Vec<Vec<f64>> = model
        .predict_batch(&inputs, execution)
        .into_iter()
        .map(|p| match p {
            Prediction::Single(dist) => Ok(dist.probs().to_vec()),
            Prediction::Tokens(_) => Err(Error::InvalidArgument("model returned token predictions".into())),
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut changed = vec![false; d.len()];
    let mut changes = Vec::with_capacity(target);
    let mut order: Vec<usize> = (0..d.len()).collect();
    'passes: for _ in 0..max_passes {
        order.shuffle(&mut rng);
        for &pos in &order {
            if changed[pos] {
                continue;
            }
            let draw = sample_index(&dists[pos], &mut rng);
            if draw != clean[pos] {
                changed[pos] = true;
                changes.push((pos, draw));
                if changes.len() == target {
                    break 'passes;
                }
            }
        }
    }
    if changes.len() < target {
        return Err(Error::NoiseTargetUnreachable {
            achieved: changes.len(),
            target,
            achieved_fraction: changes.len() as f64 / d.len() as f64,
        });
    }
    changes.sort_unstable();
    finish(d, spec, target, changes)
}

/// Empirical distribution of current labels.
pub fn label_distribution(d: &Dataset) -> Vec<f64> {
    let counts = d.stats().label_counts;
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// Empirical distribution of ground-truth labels (examples without one are skipped).
pub fn ground_truth_distribution(d: &Dataset) -> Vec<f64> {
    let mut counts = vec![0usize; d.label_space().len()];
    for label in d.examples().iter().filter_map(|e| e.ground_truth()) {
        match label {
            Label::Class(c) => counts[*c] += 1,
            Label::Tags(tags) => tags.iter().for_each(|&t| counts[t] += 1),
        }
    }
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// `KL(p || q) = sum p_i ln(p_i / q_i)` in nats, with `0 ln(0/q) = 0`.
pub fn class_imbalance_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument("distributions have different lengths".into()));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "reference has no mass on class {i} where the noised distribution does"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}
