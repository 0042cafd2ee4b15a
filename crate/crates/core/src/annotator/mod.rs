//! Annotation backends: ground-truth oracle, transcript replay, and a leased work queue
//! for live annotators.

mod queue;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use queue::{AnnotationQueue, Progress, QueueAnnotator, QueueError, SessionStatus, SubmitOutcome, DEFAULT_LEASE};

use crate::classifier::Prediction;
use crate::data::{Dataset, Input, LabelValue};

/// Model output shown alongside a request. Clients decide when to reveal it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub label: LabelValue,
    pub confidence: f64,
    pub distribution: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub id: String,
    pub input: Input,
    pub current_label: LabelValue,
    pub model_prediction: ModelPrediction,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub id: String,
    pub label: LabelValue,
    pub annotator: String,
    /// Unix milliseconds; simulated annotators use 0.
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("example {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("transcript has no response for id {0:?}")]
    MissingFromTranscript(String),
    #[error("annotation session closed before all {pending} requests were answered")]
    SessionClosed { pending: usize },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("transcript i/o: {0}")]
    Io(String),
}

pub trait Annotator {
    /// Answers every request, in request order.
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError>;

    fn name(&self) -> &str;
}

pub(crate) fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Answers with each example's ground truth. Never looks at the model prediction.
pub fn oracle_annotate(
    requests: &[AnnotationRequest],
    dataset: &Dataset,
) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
    let space = dataset.label_space();
    requests
        .iter()
        .map(|r| {
            let gt = dataset
                .get(&r.id)
                .and_then(|e| e.ground_truth())
                .ok_or_else(|| AnnotatorError::MissingGroundTruth(r.id.clone()))?;
            Ok(AnnotationResponse {
                id: r.id.clone(),
                label: space.decode(gt),
                annotator: "oracle".into(),
                timestamp: 0,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct OracleAnnotator;

impl Annotator for OracleAnnotator {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        oracle_annotate(requests, dataset)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Looks up each request id in a recorded transcript.
pub fn replay_annotate(
    requests: &[AnnotationRequest],
    transcript: &HashMap<String, AnnotationResponse>,
) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
    requests
        .iter()
        .map(|r| {
            transcript
                .get(&r.id)
                .cloned()
                .ok_or_else(|| AnnotatorError::MissingFromTranscript(r.id.clone()))
        })
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct ReplayAnnotator {
    transcript: HashMap<String, AnnotationResponse>,
}

impl ReplayAnnotator {
    /// Later responses for the same id replace earlier ones.
    pub fn new(responses: impl IntoIterator<Item = AnnotationResponse>) -> Self {
        Self {
            transcript: responses.into_iter().map(|r| (r.id.clone(), r)).collect(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, AnnotatorError> {
        Ok(Self::new(read_transcript(path)?))
    }
}

impl Annotator for ReplayAnnotator {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        _dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        replay_annotate(requests, &self.transcript)
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Wraps another annotator and keeps every response it returns.
pub struct RecordingAnnotator<A> {
    inner: A,
    log: Vec<AnnotationResponse>,
}

impl<A: Annotator> RecordingAnnotator<A> {
    pub fn new(inner: A) -> Self {
        Self { inner, log: Vec::new() }
    }

    pub fn responses(&self) -> &[AnnotationResponse] {
        &self.log
    }

    pub fn into_parts(self) -> (A, Vec<AnnotationResponse>) {
        (self.inner, self.log)
    }
}

impl<A: Annotator> Annotator for RecordingAnnotator<A> {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        let out = self.inner.annotate(requests, dataset)?;
        self.log.extend(out.iter().cloned());
        Ok(out)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

impl<A: Annotator + ?Sized> Annotator for &mut A {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        (**self).annotate(requests, dataset)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl Annotator for Box<dyn Annotator + Send> {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        (**self).annotate(requests, dataset)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Transcript format: JSONL of [`AnnotationResponse`].
pub fn read_transcript(path: &Path) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
    let file = File::open(path).map_err(|e| AnnotatorError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AnnotatorError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| AnnotatorError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_transcript(path: &Path, responses: &[AnnotationResponse]) -> Result<(), AnnotatorError> {
    let io = |e: std::io::Error| AnnotatorError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in responses {
        serde_json::to_writer(&mut w, r).map_err(|e| AnnotatorError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
