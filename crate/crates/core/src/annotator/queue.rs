use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{now_millis, AnnotationRequest, AnnotationResponse, Annotator, AnnotatorError};
use crate::data::{Dataset, LabelSpace};
use crate::engine::IterationRecord;

pub const DEFAULT_LEASE: Duration = Duration::from_secs(10 * 60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Training,
    Annotating,
    Finished,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub answered: usize,
    pub leased: usize,
    pub pending: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: String,
    pub remaining: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("no open request with id {0:?}")]
    UnknownId(String),
    #[error("request {0:?} was already answered")]
    Conflict(String),
    #[error("invalid label for {id:?}: {message}")]
    InvalidLabel { id: String, message: String },
    #[error("a batch is already being annotated")]
    Busy,
    #[error("session closed with {pending} unanswered requests")]
    Closed { pending: usize },
}

#[derive(Debug)]
enum ItemState {
    Pending,
    Leased { annotator: String, expires: Instant },
    Done(AnnotationResponse),
}

#[derive(Debug)]
struct Item {
    request: AnnotationRequest,
    state: ItemState,
}

#[derive(Debug)]
struct State {
    iteration: usize,
    items: Vec<Item>,
    index: HashMap<String, usize>,
    closed: bool,
    status: SessionStatus,
    history: Vec<IterationRecord>,
    label_space: Option<LabelSpace>,
    note: Option<String>,
}

/// Work queue between the engine and live annotators.
///
/// Each open request is leased to at most one annotator at a time; a lease that
/// outlives `lease` returns the request to the pool. The first valid submission
/// for an id wins, later ones get [`QueueError::Conflict`].
#[derive(Debug)]
pub struct AnnotationQueue {
    state: Mutex<State>,
    changed: Condvar,
    lease: Duration,
}

impl Default for AnnotationQueue {
    fn default() -> Self {
        Self::new(DEFAULT_LEASE)
    }
}

impl AnnotationQueue {
    pub fn new(lease: Duration) -> Self {
        Self {
            state: Mutex::new(State {
                iteration: 0,
                items: Vec::new(),
                index: HashMap::new(),
                closed: false,
                status: SessionStatus::Idle,
                history: Vec::new(),
                label_space: None,
                note: None,
            }),
            changed: Condvar::new(),
            lease,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn lease_duration(&self) -> Duration {
        self.lease
    }

    /// Submitted labels are validated against this space.
    pub fn set_label_space(&self, space: LabelSpace) {
        self.lock().label_space = Some(space);
    }

    pub fn label_space(&self) -> Option<LabelSpace> {
        self.lock().label_space.clone()
    }

    pub fn enqueue(&self, iteration: usize, requests: Vec<AnnotationRequest>) -> Result<(), QueueError> {
        let mut s = self.lock();
        if s.items.iter().any(|i| !matches!(i.state, ItemState::Done(_))) {
            return Err(QueueError::Busy);
        }
        s.iteration = iteration;
        s.index = requests.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        s.items = requests
            .into_iter()
            .map(|request| Item {
                request,
                state: ItemState::Pending,
            })
            .collect();
        s.status = SessionStatus::Annotating;
        drop(s);
        self.changed.notify_all();
        Ok(())
    }

    fn expire(s: &mut State, now: Instant) {
        for item in &mut s.items {
            if let ItemState::Leased { expires, .. } = item.state {
                if expires <= now {
                    item.state = ItemState::Pending;
                }
            }
        }
    }

    /// Leases the next open request. An annotator that already holds a live lease
    /// gets the same request back.
    pub fn lease_next_at(&self, annotator: &str, now: Instant) -> Option<AnnotationRequest> {
        let mut s = self.lock();
        if s.closed {
            return None;
        }
        Self::expire(&mut s, now);
        if let Some(item) = s
            .items
            .iter()
            .find(|i| matches!(&i.state, ItemState::Leased { annotator: a, .. } if a == annotator))
        {
            return Some(item.request.clone());
        }
        let lease = self.lease;
        let item = s.items.iter_mut().find(|i| matches!(i.state, ItemState::Pending))?;
        item.state = ItemState::Leased {
            annotator: annotator.to_string(),
            expires: now + lease,
        };
        Some(item.request.clone())
    }

    pub fn lease_next(&self, annotator: &str) -> Option<AnnotationRequest> {
        self.lease_next_at(annotator, Instant::now())
    }

    pub fn submit_at(&self, mut response: AnnotationResponse, now: Instant) -> Result<SubmitOutcome, QueueError> {
        let mut s = self.lock();
        if s.closed {
            let pending = s
                .items
                .iter()
                .filter(|i| !matches!(i.state, ItemState::Done(_)))
                .count();
            return Err(QueueError::Closed { pending });
        }
        Self::expire(&mut s, now);
        let pos = *s
            .index
            .get(&response.id)
            .ok_or_else(|| QueueError::UnknownId(response.id.clone()))?;
        if let Some(space) = &s.label_space {
            space.encode(&response.label).map_err(|e| QueueError::InvalidLabel {
                id: response.id.clone(),
                message: e.to_string(),
            })?;
            if let (Some(n), crate::data::LabelValue::Many(tags)) =
                (s.items[pos].request.input.token_count(), &response.label)
            {
                if n != tags.len() {
                    return Err(QueueError::InvalidLabel {
                        id: response.id.clone(),
                        message: format!("{} tags for {} tokens", tags.len(), n),
                    });
                }
            }
        }
        if matches!(s.items[pos].state, ItemState::Done(_)) {
            return Err(QueueError::Conflict(response.id));
        }
        if response.timestamp == 0 {
            response.timestamp = now_millis();
        }
        let id = response.id.clone();
        s.items[pos].state = ItemState::Done(response);
        let remaining = s
            .items
            .iter()
            .filter(|i| !matches!(i.state, ItemState::Done(_)))
            .count();
        drop(s);
        self.changed.notify_all();
        Ok(SubmitOutcome {
            accepted: id,
            remaining,
        })
    }

    pub fn submit(&self, response: AnnotationResponse) -> Result<SubmitOutcome, QueueError> {
        self.submit_at(response, Instant::now())
    }

    /// Blocks until every request of the current batch is answered, then drains it.
    pub fn wait_all(&self) -> Result<Vec<AnnotationResponse>, QueueError> {
        let mut s = self.lock();
        loop {
            let pending = s
                .items
                .iter()
                .filter(|i| !matches!(i.state, ItemState::Done(_)))
                .count();
            if pending == 0 {
                let items = std::mem::take(&mut s.items);
                s.index.clear();
                // the engine retrains before the next batch
                s.status = SessionStatus::Training;
                return Ok(items
                    .into_iter()
                    .map(|i| match i.state {
                        ItemState::Done(r) => r,
                        _ => unreachable!(),
                    })
                    .collect());
            }
            if s.closed {
                return Err(QueueError::Closed { pending });
            }
            s = self.changed.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn progress_at(&self, now: Instant) -> Progress {
        let mut s = self.lock();
        Self::expire(&mut s, now);
        let mut p = Progress {
            total: s.items.len(),
            ..Progress::default()
        };
        for i in &s.items {
            match i.state {
                ItemState::Pending => p.pending += 1,
                ItemState::Leased { .. } => p.leased += 1,
                ItemState::Done(_) => p.answered += 1,
            }
        }
        p
    }

    pub fn progress(&self) -> Progress {
        self.progress_at(Instant::now())
    }

    pub fn iteration(&self) -> usize {
        self.lock().iteration
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().status
    }

    pub fn set_status(&self, status: SessionStatus) {
        self.lock().status = status;
    }

    /// Free-form note shown with the session (e.g. the stop rule that fired).
    pub fn set_note(&self, note: impl Into<String>) {
        self.lock().note = Some(note.into());
    }

    pub fn note(&self) -> Option<String> {
        self.lock().note.clone()
    }

    pub fn push_record(&self, record: IterationRecord) {
        self.lock().history.push(record);
    }

    pub fn history(&self) -> Vec<IterationRecord> {
        self.lock().history.clone()
    }
}

/// Engine-side adapter: enqueues a batch and blocks until annotators finish it.
#[derive(Clone, Debug)]
pub struct QueueAnnotator {
    queue: Arc<AnnotationQueue>,
}

impl QueueAnnotator {
    pub fn new(queue: Arc<AnnotationQueue>) -> Self {
        Self { queue }
    }

    pub fn queue(&self) -> &Arc<AnnotationQueue> {
        &self.queue
    }
}

impl Annotator for QueueAnnotator {
    fn annotate(
        &mut self,
        requests: &[AnnotationRequest],
        dataset: &Dataset,
    ) -> Result<Vec<AnnotationResponse>, AnnotatorError> {
        if self.queue.label_space().is_none() {
            self.queue.set_label_space(dataset.label_space().clone());
        }
        let iteration = requests.first().map(|r| r.iteration).unwrap_or(0);
        let order: Vec<String> = requests.iter().map(|r| r.id.clone()).collect();
        self.queue
            .enqueue(iteration, requests.to_vec())
            .map_err(|e| AnnotatorError::InvalidResponse(e.to_string()))?;
        let responses = self.queue.wait_all().map_err(|e| match e {
            QueueError::Closed { pending } => AnnotatorError::SessionClosed { pending },
            other => AnnotatorError::InvalidResponse(other.to_string()),
        })?;
        debug_assert!(responses.iter().map(|r| &r.id).eq(order.iter()));
        Ok(responses)
    }

    fn name(&self) -> &str {
        "queue"
    }
}
