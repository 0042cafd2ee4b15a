use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, featurize_token, FeatureVector};
use super::objective::{Params, Sample};
use super::prediction::Prediction;
use crate::data::{Input, Label, LabelSpace, TaskKind, TrainingPair};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Hyper-parameters of the built-in classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Initial per-example step size; epoch `e` uses `learning_rate / (1 + lr_decay · e)`.
    /// A batch of `B` examples takes a step of `B` times this on the mean-loss gradient.
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub l2: f64,
    pub dimension: usize,
    pub batch_size: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 10,
            learning_rate: 0.1,
            lr_decay: 0.5,
            l2: 1e-4,
            dimension: 1 << 18,
            batch_size: 32,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::config("train.dimension", "must be at least 2"));
        }
        if self.dimension > u32::MAX as usize {
            return Err(Error::config("train.dimension", "must fit in 32 bits"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a positive number"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("train.l2", "must be non-negative"));
        }
        if self.learning_rate * self.batch_size as f64 * self.l2 >= 1.0 {
            return Err(Error::config(
                "train.l2",
                "learning_rate · batch_size · l2 must stay below 1",
            ));
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::config("train.lr_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Anything that maps an input to per-class probabilities.
pub trait Classifier: Send + Sync {
    fn label_space(&self) -> &LabelSpace;

    fn predict_proba(&self, input: &Input) -> Prediction;

    fn predict_batch(&self, inputs: &[&Input], execution: Execution) -> Vec<Prediction> {
        execution.map(inputs, |i| self.predict_proba(i))
    }
}

/// Trains a [`Classifier`] from a training view.
pub trait Learner: Send + Sync {
    type Model: Classifier;

    fn fit(&self, view: &[TrainingPair<'_>], space: &LabelSpace, seed: u64) -> Result<Self::Model>;

    fn execution(&self) -> Execution {
        Execution::default()
    }
}

/// Built-in learner: hashed-feature multinomial logistic regression.
#[derive(Clone, Debug, Default)]
pub struct LogisticLearner {
    pub config: TrainConfig,
}

impl LogisticLearner {
    pub fn new(config: TrainConfig) -> Self {
        Self { config }
    }
}

impl Learner for LogisticLearner {
    type Model = LogisticModel;

    fn fit(&self, view: &[TrainingPair<'_>], space: &LabelSpace, seed: u64) -> Result<LogisticModel> {
        let mut config = self.config.clone();
        config.seed = seed;
        train(view, space, &config)
    }

    fn execution(&self) -> Execution {
        self.config.execution
    }
}

/// Linear softmax weights stored as `scale · weights` so L2 decay is O(1) per step.
#[derive(Clone, Debug, PartialEq)]
struct ScaledParams {
    params: Params,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct ScaledParamsRepr {
    n_classes: usize,
    dimension: usize,
    scale: f64,
    bias: Vec<f64>,
    /// Non-zero feature rows only.
    rows: Vec<(u32, Vec<f64>)>,
}

impl Serialize for ScaledParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let k = self.params.n_classes;
        let rows = self
            .params
            .weights
            .chunks(k)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&w| w != 0.0))
            .map(|(j, row)| (j as u32, row.to_vec()))
            .collect();
        ScaledParamsRepr {
            n_classes: k,
            dimension: self.params.dimension,
            scale: self.scale,
            bias: self.params.bias.clone(),
            rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScaledParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ScaledParamsRepr::deserialize(d)?;
        let mut params = Params::zeros(r.dimension, r.n_classes);
        if r.bias.len() != r.n_classes {
            return Err(D::Error::custom("bias length does not match class count"));
        }
        params.bias = r.bias;
        for (j, row) in r.rows {
            let j = j as usize;
            if j >= r.dimension || row.len() != r.n_classes {
                return Err(D::Error::custom("weight row out of range"));
            }
            params.weights[j * r.n_classes..(j + 1) * r.n_classes].copy_from_slice(&row);
        }
        Ok(Self { params, scale: r.scale })
    }
}

/// Trained hashed-feature logistic regression (per-token for sequence tasks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    format_version: u32,
    label_space: LabelSpace,
    config: TrainConfig,
    weights: ScaledParams,
}

impl LogisticModel {
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Effective dense parameters (scale folded in).
    pub fn params(&self) -> Params {
        let mut p = self.weights.params.clone();
        let s = self.weights.scale;
        p.weights.iter_mut().for_each(|w| *w *= s);
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LogisticModel = serde_json::from_str(&text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

impl Classifier for LogisticModel {
    fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    fn predict_proba(&self, input: &Input) -> Prediction {
        let dim = self.config.dimension;
        let w = &self.weights;
        match self.label_space.kind() {
            TaskKind::Classification => {
                let x = featurize(&input.text(), dim);
                Prediction::Single(w.params.distribution(&x, w.scale))
            }
            TaskKind::SequenceLabeling => {
                let tokens = sentence_tokens(input);
                Prediction::Tokens(
                    (0..tokens.len())
                        .map(|p| w.params.distribution(&featurize_token(&tokens, p, dim), w.scale))
                        .collect(),
                )
            }
        }
    }
}

fn sentence_tokens(input: &Input) -> Vec<String> {
    match input {
        Input::Tokens(t) => t.clone(),
        Input::Text(s) => s.split_whitespace().map(str::to_string).collect(),
    }
}

/// Featurizes a training view into samples (one per token for sequence tasks).
pub fn build_samples(
    view: &[TrainingPair<'_>],
    space: &LabelSpace,
    dimension: usize,
    execution: Execution,
) -> Vec<Sample> {
    let per_pair = execution.map(view, |pair| match (space.kind(), pair.label) {
        (TaskKind::Classification, Label::Class(c)) => vec![Sample {
            features: featurize(&pair.input.text(), dimension),
            class: *c,
        }],
        (TaskKind::SequenceLabeling, Label::Tags(tags)) => {
            let tokens = sentence_tokens(pair.input);
            tags.iter()
                .enumerate()
                .map(|(p, &t)| Sample {
                    features: featurize_token(&tokens, p, dimension),
                    class: t,
                })
                .collect()
        }
        _ => Vec::new(),
    });
    per_pair.into_iter().flatten().collect()
}

/// Fits the built-in classifier by seeded mini-batch gradient descent with L2.
pub fn train(view: &[TrainingPair<'_>], space: &LabelSpace, config: &TrainConfig) -> Result<LogisticModel> {
    config.validate()?;
    if view.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty view".into()));
    }
    let samples = build_samples(view, space, config.dimension, config.execution);
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training view produced no samples".into()));
    }
    let weights = fit_samples(&samples, space.len(), config);
    Ok(LogisticModel {
        format_version: MODEL_FORMAT_VERSION,
        label_space: space.clone(),
        config: config.clone(),
        weights,
    })
}

/// Residuals are computed in parallel only for batches at least this large.
const PARALLEL_BATCH: usize = 256;

fn fit_samples(samples: &[Sample], n_classes: usize, config: &TrainConfig) -> ScaledParams {
    let mut w = ScaledParams {
        params: Params::zeros(config.dimension, n_classes),
        scale: 1.0,
    };
    // smoothed log-prior bias; classes absent from the view keep a low prior
    let mut counts = vec![0usize; n_classes];
    samples.iter().for_each(|s| counts[s.class] += 1);
    let total = samples.len() as f64 + n_classes as f64;
    for (b, &c) in w.params.bias.iter_mut().zip(&counts) {
        *b = ((c as f64 + 1.0) / total).ln();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let k = n_classes;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        for batch in order.chunks(config.batch_size) {
            let residual = |&i: &usize| w.params.residual(&samples[i], w.scale);
            let residuals: Vec<Vec<f64>> = if batch.len() >= PARALLEL_BATCH {
                config.execution.map(batch, residual)
            } else {
                batch.iter().map(residual).collect()
            };
            // SGD on the mean objective with step lr·B: w ← (1 − lr·B·λ) w − lr·Σ g_i,
            // applied as a scale change plus a sparse step
            w.scale *= 1.0 - lr * batch.len() as f64 * config.l2;
            let step = lr / w.scale;
            for (&i, r) in batch.iter().zip(&residuals) {
                for &(j, x) in samples[i].features.entries() {
                    let row = &mut w.params.weights[j as usize * k..(j as usize + 1) * k];
                    for (wc, rc) in row.iter_mut().zip(r) {
                        *wc -= step * x * rc;
                    }
                }
                for (b, rc) in w.params.bias.iter_mut().zip(r) {
                    *b -= lr * rc;
                }
            }
            if w.scale < 1e-6 {
                let s = w.scale;
                w.params.weights.iter_mut().for_each(|v| *v *= s);
                w.scale = 1.0;
            }
        }
    }
    w
}

/// Features for a classification input (exposed for diagnostics and benches).
pub fn input_features(input: &Input, dimension: usize) -> FeatureVector {
    featurize(&input.text(), dimension)
}
