use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::artifacts::{FlagEntry, RunArtifacts, BASELINE_FILE, CHECKPOINT_FILE, OUTCOME_FILE};
use super::config::{EngineConfig, StopRule, Strategy};
use super::scoring::{
    auto_correct_with, compute_eta, compute_mp_precision, filter_count, filter_examples, flag_for_annotation,
    flag_truth, scores_from_predictions, AnnotationOutcome, FlagTruth, MisannotationScore,
};
use crate::annotator::{AnnotationRequest, AnnotationResponse, Annotator, ModelPrediction};
use crate::classifier::{evaluate, Learner, Metrics};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};

pub const CHECKPOINT_VERSION: u32 = 1;

const TRAIN_STREAM: u64 = 0x0074_7261_696e;
const FLAG_STREAM: u64 = 0x666c_6167;
const ORACLE_STREAM: u64 = 0x6f72_6163_6c65;

/// Everything recorded about one completed iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub strategy: Strategy,
    pub m_flag: usize,
    /// `round(M · |D|)`; larger than `m_flag` once eligible examples run out.
    pub flag_requested: usize,
    pub m_corr: usize,
    pub auto_corrected: usize,
    pub m_filter: usize,
    pub p_mp: f64,
    /// Token-level MP precision (sequence tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_p_mp: Option<f64>,
    pub eta_k: f64,
    /// Held-out metrics of the model trained at the end of this iteration.
    pub eval: Metrics,
    pub cumulative_annotated: usize,
    pub cumulative_annotated_fraction: f64,
    /// Flag precision/recall against ground truth, when every example has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_truth: Option<FlagTruth>,
    /// Fraction of current labels that disagree with ground truth after the iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_fraction: Option<f64>,
}

/// State between handing out annotation requests and receiving the answers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingIteration {
    pub iteration: usize,
    pub auto_corrected: usize,
    pub requested: usize,
    pub requests: Vec<AnnotationRequest>,
    /// Misannotation scores after auto-correction; used to rank filter candidates.
    pub scores: Vec<MisannotationScore>,
    pub flag_truth: Option<FlagTruth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Rule {
        rule: StopRule,
    },
    MaxIterations,
    /// No example was left to flag.
    Exhausted,
}

impl StopReason {
    pub fn is_rule(&self) -> bool {
        matches!(self, StopReason::Rule { .. })
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Rule { rule } => write!(f, "stop rule {rule}"),
            StopReason::MaxIterations => f.write_str("max_iterations reached"),
            StopReason::Exhausted => f.write_str("no examples left to flag"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub strategy: Strategy,
    pub stop: StopReason,
    pub iterations: usize,
    pub baseline: Option<Metrics>,
    pub final_eval: Option<Metrics>,
    pub oracle_reference: Option<f64>,
    pub eta0: f64,
    pub cumulative_annotated_fraction: f64,
}

/// Resumable engine state. The model is not stored: training is deterministic, so
/// it is rebuilt from the dataset state on resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: EngineConfig,
    pub eta0: f64,
    pub dataset: Dataset,
    pub test: Dataset,
    pub history: Vec<IterationRecord>,
    pub baseline: Option<Metrics>,
    pub pending: Option<PendingIteration>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                cp.format_version
            )));
        }
        Ok(cp)
    }
}

/// Fraction of test examples whose label disagrees with ground truth. `None` when
/// no test example carries ground truth.
pub fn estimate_eta0(test: &Dataset) -> Option<f64> {
    let judged: Vec<bool> = test.examples().iter().filter_map(|e| e.is_misannotated()).collect();
    if judged.is_empty() {
        return None;
    }
    Some(judged.iter().filter(|&&w| w).count() as f64 / judged.len() as f64)
}

/// Held-out metrics of a model trained on ground-truth labels.
pub fn oracle_metrics<L: Learner>(learner: &L, train: &Dataset, test: &Dataset, seed: u64) -> Result<Metrics> {
    let clean = train.with_ground_truth_labels()?;
    let view = clean.training_view()?;
    let model = learner.fit(&view, clean.label_space(), derive_seed(&[seed, ORACLE_STREAM]))?;
    evaluate(&model, test, learner.execution())
}

type Observer = Box<dyn FnMut(&IterationRecord) + Send>;

/// Drives the iterative correction loop over one dataset.
///
/// Each iteration: reset ephemeral state, auto-correct with the current model,
/// score, flag, collect annotations, update MP precision and `eta_k`, filter, then
/// retrain on the updated training view and evaluate the new model.
pub struct Engine<L: Learner> {
    config: EngineConfig,
    learner: L,
    dataset: Dataset,
    test: Dataset,
    eta0: f64,
    history: Vec<IterationRecord>,
    baseline: Option<Metrics>,
    pending: Option<PendingIteration>,
    model: Option<L::Model>,
    artifacts: Option<RunArtifacts>,
    observer: Option<Observer>,
}

impl<L: Learner> Engine<L> {
    pub fn new(config: EngineConfig, learner: L, dataset: Dataset, test: Dataset) -> Result<Self> {
        config.validate(dataset.len())?;
        if dataset.label_space() != test.label_space() {
            return Err(Error::LabelSpace(
                "dataset and test split use different label spaces".into(),
            ));
        }
        let eta0 = match config.eta0 {
            Some(v) => v,
            None => estimate_eta0(&test).ok_or_else(|| {
                Error::config(
                    "eta0",
                    "not configured and the test split has no ground truth to estimate it from",
                )
            })?,
        };
        Ok(Self {
            config,
            learner,
            dataset,
            test,
            eta0,
            history: Vec::new(),
            baseline: None,
            pending: None,
            model: None,
            artifacts: None,
            observer: None,
        })
    }

    pub fn resume(checkpoint: Checkpoint, learner: L) -> Result<Self> {
        checkpoint.config.validate(checkpoint.dataset.len())?;
        Ok(Self {
            config: checkpoint.config,
            learner,
            dataset: checkpoint.dataset,
            test: checkpoint.test,
            eta0: checkpoint.eta0,
            history: checkpoint.history,
            baseline: checkpoint.baseline,
            pending: checkpoint.pending,
            model: None,
            artifacts: None,
            observer: None,
        })
    }

    /// Writes per-iteration artifacts and checkpoints into `artifacts`.
    pub fn with_artifacts(mut self, artifacts: RunArtifacts) -> Self {
        self.artifacts = Some(artifacts);
        self
    }

    /// Called with every completed iteration record.
    pub fn set_observer(&mut self, observer: impl FnMut(&IterationRecord) + Send + 'static) {
        self.observer = Some(Box::new(observer));
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn learner(&self) -> &L {
        &self.learner
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn baseline(&self) -> Option<&Metrics> {
        self.baseline.as_ref()
    }

    pub fn pending(&self) -> Option<&PendingIteration> {
        self.pending.as_ref()
    }

    pub fn artifacts(&self) -> Option<&RunArtifacts> {
        self.artifacts.as_ref()
    }

    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    fn execution(&self) -> Execution {
        self.learner.execution()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            eta0: self.eta0,
            dataset: self.dataset.clone(),
            test: self.test.clone(),
            history: self.history.clone(),
            baseline: self.baseline.clone(),
            pending: self.pending.clone(),
        }
    }

    fn save_checkpoint(&self) -> Result<()> {
        if let Some(a) = &self.artifacts {
            a.write_bytes(CHECKPOINT_FILE, serde_json::to_string(&self.checkpoint())?.as_bytes())?;
        }
        Ok(())
    }

    fn train(&self, k: usize) -> Result<L::Model> {
        let view = self.dataset.training_view()?;
        debug!(k, examples = view.len(), "training");
        self.learner.fit(
            &view,
            self.dataset.label_space(),
            derive_seed(&[self.config.seed, TRAIN_STREAM, k as u64]),
        )
    }

    /// The model trained on the current training view, training it if needed.
    /// Before iteration 1 this is the baseline model, whose metrics are recorded.
    pub fn ensure_model(&mut self) -> Result<&L::Model> {
        if self.model.is_none() {
            if self.pending.is_some() {
                return Err(Error::InvalidArgument("an iteration is awaiting annotations".into()));
            }
            let model = self.train(self.history.len())?;
            if self.history.is_empty() && self.baseline.is_none() {
                let metrics = evaluate(&model, &self.test, self.execution())?;
                info!(primary = metrics.primary(), "baseline model");
                if let Some(a) = &self.artifacts {
                    a.write_json(BASELINE_FILE, &metrics)?;
                }
                self.baseline = Some(metrics);
            }
            self.model = Some(model);
        }
        Ok(self.model.as_ref().expect("model set above"))
    }

    /// Runs the steps up to flagging and returns the annotation requests. Returns
    /// `None` when no example is eligible for flagging. Calling it again before
    /// [`Engine::complete_iteration`] returns the same requests.
    pub fn begin_iteration(&mut self) -> Result<Option<&[AnnotationRequest]>> {
        if self.pending.is_none() {
            let Some(pending) = self.prepare_iteration()? else {
                return Ok(None);
            };
            self.pending = Some(pending);
            self.save_checkpoint()?;
        }
        Ok(self.pending.as_ref().map(|p| p.requests.as_slice()))
    }

    fn prepare_iteration(&mut self) -> Result<Option<PendingIteration>> {
        let k = self.history.len() + 1;
        self.ensure_model()?;
        let model = self.model.as_ref().expect("ensured");
        self.dataset.reset_ephemeral();
        let preds = {
            let inputs: Vec<_> = self.dataset.examples().iter().map(|e| e.input()).collect();
            crate::classifier::Classifier::predict_batch(model, &inputs, self.execution())
        };
        let auto_corrected = if self.config.strategy.auto_corrects() {
            auto_correct_with(&preds, &mut self.dataset, self.config.delta).len()
        } else {
            0
        };
        let scores = scores_from_predictions(&preds, &self.dataset);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, FLAG_STREAM, k as u64]));
        let selection = flag_for_annotation(
            &scores,
            &self.dataset,
            self.config.strategy,
            self.config.flag_fraction,
            &mut rng,
        );
        if selection.ids.is_empty() {
            return Ok(None);
        }
        let space = self.dataset.label_space();
        let score_of: std::collections::HashMap<&str, f64> = scores.iter().map(|s| (s.id.as_str(), s.score)).collect();
        let mut requests = Vec::with_capacity(selection.ids.len());
        let mut flags = Vec::with_capacity(selection.ids.len());
        for id in &selection.ids {
            let pos = self.dataset.position(id).expect("flagged ids exist");
            let e = &self.dataset.examples()[pos];
            let pred = &preds[pos];
            let best = pred.argmax_label();
            let model_prediction = ModelPrediction {
                label: space.decode(&best),
                confidence: pred.label_prob(&best),
                distribution: pred.clone(),
            };
            let request = AnnotationRequest {
                id: id.clone(),
                input: e.input().clone(),
                current_label: space.decode(e.current_label()),
                model_prediction,
                iteration: k,
            };
            flags.push(FlagEntry {
                id: id.clone(),
                score: score_of[id.as_str()],
                input: request.input.clone(),
                current_label: request.current_label.clone(),
                model_prediction: request.model_prediction.clone(),
            });
            requests.push(request);
        }
        if let Some(a) = &self.artifacts {
            a.write_flags(k, &flags)?;
        }
        info!(k, flagged = requests.len(), auto_corrected, "iteration prepared");
        Ok(Some(PendingIteration {
            iteration: k,
            auto_corrected,
            requested: selection.requested,
            flag_truth: flag_truth(&selection.ids, &self.dataset),
            requests,
            scores,
        }))
    }

    /// Applies the annotator's answers and finishes the pending iteration. The
    /// responses are validated as a whole first: on error nothing is applied.
    pub fn complete_iteration(&mut self, responses: &[AnnotationResponse]) -> Result<IterationRecord> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no iteration is awaiting annotations".into()))?;
        let labels = self.validate_responses(pending, responses)?;
        let pending = self.pending.take().expect("checked above");
        let k = pending.iteration;

        let mut outcomes = Vec::with_capacity(labels.len());
        for (id, label) in labels {
            let before = self.dataset.get(&id).expect("validated").current_label().clone();
            self.dataset.apply_annotation(&id, label.clone(), false)?;
            outcomes.push(AnnotationOutcome { before, after: label });
        }
        let mp = compute_mp_precision(&outcomes)?;
        let mut corrections: Vec<usize> = self.history.iter().map(|r| r.m_corr).collect();
        corrections.push(mp.m_corr);
        let n = self.dataset.len();
        let eta_k = compute_eta(self.eta0, &corrections, n);
        let m_filter = if self.config.strategy.filters() {
            let count = filter_count(mp.m_corr, mp.precision, eta_k, self.config.filter_multiplier);
            filter_examples(&pending.scores, &mut self.dataset, count).len()
        } else {
            0
        };

        self.model = None;
        let model = self.train(k)?;
        let eval = evaluate(&model, &self.test, self.execution())?;
        self.model = Some(model);

        let cumulative_annotated = self.history.iter().map(|r| r.m_flag).sum::<usize>() + mp.m_flag;
        let record = IterationRecord {
            iteration: k,
            strategy: self.config.strategy,
            m_flag: mp.m_flag,
            flag_requested: pending.requested,
            m_corr: mp.m_corr,
            auto_corrected: pending.auto_corrected,
            m_filter,
            p_mp: mp.precision,
            token_p_mp: mp.token_precision,
            eta_k,
            eval,
            cumulative_annotated,
            cumulative_annotated_fraction: cumulative_annotated as f64 / n as f64,
            flag_truth: pending.flag_truth,
            noise_fraction: self.dataset.stats().noise_fraction,
        };
        info!(
            k,
            m_corr = record.m_corr,
            p_mp = record.p_mp,
            eta_k,
            m_filter,
            primary = record.eval.primary(),
            "iteration complete"
        );
        self.history.push(record.clone());
        if let Some(a) = &self.artifacts {
            a.write_iteration(&record)?;
            a.write_history(&self.history)?;
        }
        self.save_checkpoint()?;
        if let Some(observer) = self.observer.as_mut() {
            observer(&record);
        }
        Ok(record)
    }

    fn validate_responses(
        &self,
        pending: &PendingIteration,
        responses: &[AnnotationResponse],
    ) -> Result<Vec<(String, Label)>> {
        let mut by_id = std::collections::HashMap::with_capacity(responses.len());
        for r in responses {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate response for id {:?}", r.id)));
            }
        }
        let space = self.dataset.label_space();
        let mut out = Vec::with_capacity(pending.requests.len());
        for req in &pending.requests {
            let r = by_id
                .remove(req.id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("missing response for id {:?}", req.id)))?;
            let label = space.encode(&r.label).map_err(|e| Error::InvalidLabel {
                id: r.id.clone(),
                message: e.to_string(),
            })?;
            let pos = self
                .dataset
                .position(&req.id)
                .ok_or_else(|| Error::UnknownId(req.id.clone()))?;
            self.dataset.check_label(pos, &label)?;
            out.push((req.id.clone(), label));
        }
        if let Some(extra) = by_id.keys().next() {
            return Err(Error::InvalidArgument(format!("response for unrequested id {extra:?}")));
        }
        Ok(out)
    }

    /// Runs one full iteration. `None` when nothing is left to flag. If the
    /// annotator fails, no label is changed and the iteration stays pending.
    pub fn run_iteration<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<Option<IterationRecord>> {
        let Some(requests) = self.begin_iteration()? else {
            return Ok(None);
        };
        let requests = requests.to_vec();
        let responses = annotator.annotate(&requests, &self.dataset)?;
        self.complete_iteration(&responses).map(Some)
    }

    /// First configured stop rule satisfied by `record`.
    pub fn check_stop(&self, record: &IterationRecord) -> Option<StopRule> {
        const EPS: f64 = 1e-12;
        self.config.stop_rules.iter().find_map(|rule| {
            let hit = match *rule {
                StopRule::CloseToOracle { band } => self
                    .config
                    .oracle_reference
                    .is_some_and(|r| record.eval.primary() >= r - band - EPS),
                StopRule::MpPrecisionFloor { threshold } => record.p_mp < threshold,
                StopRule::Budget { max_annotated_fraction } => {
                    record.cumulative_annotated_fraction >= max_annotated_fraction - EPS
                }
            };
            hit.then(|| rule.clone())
        })
    }

    /// Iterates until a stop rule fires, `max_iterations` is reached, or nothing
    /// is left to flag. Resumes a pending iteration first.
    pub fn run_until_stop<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<RunOutcome> {
        if self.config.close_to_oracle_band().is_some() && self.config.oracle_reference.is_none() {
            return Err(Error::config(
                "oracle_reference",
                "the close_to_oracle stop rule needs an oracle reference value",
            ));
        }
        let stop = loop {
            if let Some(rule) = self.history.last().and_then(|r| self.check_stop(r)) {
                break StopReason::Rule { rule };
            }
            if self.history.len() >= self.config.max_iterations {
                break StopReason::MaxIterations;
            }
            if self.run_iteration(annotator)?.is_none() {
                break StopReason::Exhausted;
            }
        };
        if self.baseline.is_none() {
            self.ensure_model()?;
        }
        info!(%stop, iterations = self.history.len(), "run finished");
        let outcome = RunOutcome {
            strategy: self.config.strategy,
            stop,
            iterations: self.history.len(),
            baseline: self.baseline.clone(),
            final_eval: self.history.last().map(|r| r.eval.clone()),
            oracle_reference: self.config.oracle_reference,
            eta0: self.eta0,
            cumulative_annotated_fraction: self.history.last().map_or(0.0, |r| r.cumulative_annotated_fraction),
        };
        if let Some(a) = &self.artifacts {
            a.write_dataset(&self.dataset)?;
            a.write_history(&self.history)?;
            a.write_json(OUTCOME_FILE, &outcome)?;
        }
        Ok(outcome)
    }
}
