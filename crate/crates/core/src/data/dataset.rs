use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::example::{Example, Source};
use super::label::{Input, Label, LabelSpace, TaskKind};
use crate::error::{Error, Result};

/// Ordered collection of examples over one label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    name: String,
    label_space: LabelSpace,
    examples: Vec<Example>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct DatasetRepr {
    name: String,
    label_space: LabelSpace,
    examples: Vec<Example>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::with_state(r.name, r.label_space, r.examples)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            name: d.name,
            label_space: d.label_space,
            examples: d.examples,
        }
    }
}

/// One `(input, current_label)` pair of the training view.
#[derive(Clone, Copy, Debug)]
pub struct TrainingPair<'a> {
    pub id: &'a str,
    pub input: &'a Input,
    pub label: &'a Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub size: usize,
    /// Count of current labels per class (per tag, over tokens, for sequence tasks).
    pub label_counts: Vec<usize>,
    /// Fraction of examples whose current label differs from ground truth.
    pub noise_fraction: Option<f64>,
    /// Fraction of tokens whose current tag differs from ground truth (sequence tasks).
    pub token_noise_fraction: Option<f64>,
    pub filtered: usize,
    pub auto_corrected: usize,
    pub human_annotated: usize,
}

impl Dataset {
    /// Builds a dataset from freshly ingested examples. Every example is reset to
    /// `source = Original`, unfiltered.
    pub fn new(name: impl Into<String>, label_space: LabelSpace, examples: Vec<Example>) -> Result<Self> {
        let examples = examples
            .into_iter()
            .map(|mut e| {
                e.current_label = e.original_label.clone();
                e.source = Source::Original;
                e.filtered = false;
                e
            })
            .collect();
        Self::with_state(name, label_space, examples)
    }

    /// Builds a dataset keeping each example's provenance state, validating it.
    pub fn with_state(name: impl Into<String>, label_space: LabelSpace, examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut index = HashMap::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            validate_example(&label_space, e)?;
        }
        if examples.iter().all(|e| e.filtered) {
            return Err(Error::AllFiltered);
        }
        Ok(Self {
            name: name.into(),
            label_space,
            examples,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn kind(&self) -> TaskKind {
        self.label_space.kind()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.examples.iter().all(|e| e.ground_truth.is_some())
    }

    pub fn filtered_count(&self) -> usize {
        self.examples.iter().filter(|e| e.filtered).count()
    }

    /// Unfiltered examples with their current labels, in dataset order.
    pub fn training_view(&self) -> Result<Vec<TrainingPair<'_>>> {
        let view: Vec<_> = self
            .examples
            .iter()
            .filter(|e| !e.filtered)
            .map(|e| TrainingPair {
                id: &e.id,
                input: &e.input,
                label: &e.current_label,
            })
            .collect();
        if view.is_empty() {
            return Err(Error::AllFiltered);
        }
        Ok(view)
    }

    /// Reverts auto-corrections and clears filter flags. Human labels are untouched.
    /// Returns the number of examples that changed.
    pub fn reset_ephemeral(&mut self) -> usize {
        let mut changed = 0;
        for e in &mut self.examples {
            let mut touched = false;
            if e.source == Source::AutoCorrected {
                e.source = Source::Original;
                e.current_label = e.original_label.clone();
                touched = true;
            }
            if e.filtered {
                e.filtered = false;
                touched = true;
            }
            changed += usize::from(touched);
        }
        changed
    }

    /// Records an annotator's label. Re-annotating a human label requires `allow_override`.
    pub fn apply_annotation(&mut self, id: &str, label: Label, allow_override: bool) -> Result<&Example> {
        let pos = self.position(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        self.check_label(pos, &label)?;
        let e = &mut self.examples[pos];
        if e.source == Source::HumanAnnotated && !allow_override {
            return Err(Error::AlreadyAnnotated(id.to_string()));
        }
        e.current_label = label;
        e.source = Source::HumanAnnotated;
        e.filtered = false;
        Ok(&self.examples[pos])
    }

    /// Replaces the label of a non-human example with a model prediction.
    pub(crate) fn auto_correct_at(&mut self, pos: usize, label: Label) {
        let e = &mut self.examples[pos];
        debug_assert!(e.source != Source::HumanAnnotated);
        debug_assert!(self.label_space.check(&label));
        e.current_label = label;
        e.source = Source::AutoCorrected;
    }

    /// Marks a non-human example as filtered; refuses to empty the training view.
    pub(crate) fn filter_at(&mut self, pos: usize) -> bool {
        if self.examples[pos].source == Source::HumanAnnotated || self.examples[pos].filtered {
            return false;
        }
        let unfiltered = self.examples.iter().filter(|e| !e.filtered).count();
        if unfiltered <= 1 {
            return false;
        }
        self.examples[pos].filtered = true;
        true
    }

    /// Overwrites an example's label as if ingested that way (noise injection).
    pub(crate) fn relabel_original_at(&mut self, pos: usize, label: Label) {
        let e = &mut self.examples[pos];
        e.original_label = label.clone();
        e.current_label = label;
        e.source = Source::Original;
        e.filtered = false;
    }

    /// Keeps only examples at the given positions (in the given order).
    pub(crate) fn subset(&self, positions: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let examples = positions.iter().map(|&p| self.examples[p].clone()).collect();
        Dataset::with_state(name, self.label_space.clone(), examples)
    }

    /// Copy of this dataset where every label is replaced by its ground truth.
    pub fn with_ground_truth_labels(&self) -> Result<Dataset> {
        let examples = self
            .examples
            .iter()
            .map(|e| {
                let gt = e
                    .ground_truth
                    .clone()
                    .ok_or_else(|| Error::GroundTruthRequired(format!("example {:?}", e.id)))?;
                Ok(Example::new(e.id.clone(), e.input.clone(), gt.clone(), Some(gt)))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            format!("{}-ground-truth", self.name),
            self.label_space.clone(),
            examples,
        )
    }

    pub(crate) fn check_label(&self, pos: usize, label: &Label) -> Result<()> {
        let e = &self.examples[pos];
        if !self.label_space.check(label) {
            return Err(Error::InvalidLabel {
                id: e.id.clone(),
                message: "label outside the label space".into(),
            });
        }
        if let (Some(n), Label::Tags(tags)) = (e.input.token_count(), label) {
            if n != tags.len() {
                return Err(Error::InvalidLabel {
                    id: e.id.clone(),
                    message: format!("{} tags for {} tokens", tags.len(), n),
                });
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut label_counts = vec![0; self.label_space.len()];
        for e in &self.examples {
            match &e.current_label {
                Label::Class(c) => label_counts[*c] += 1,
                Label::Tags(tags) => tags.iter().for_each(|&t| label_counts[t] += 1),
            }
        }
        let (noise_fraction, token_noise_fraction) = if self.has_ground_truth() {
            let wrong_examples = self
                .examples
                .iter()
                .filter(|e| e.is_misannotated() == Some(true))
                .count();
            let frac = wrong_examples as f64 / self.len() as f64;
            let token = (self.kind() == TaskKind::SequenceLabeling).then(|| {
                let (wrong, total) = self.examples.iter().fold((0usize, 0usize), |(w, t), e| {
                    let gt = e.ground_truth.as_ref().expect("checked above");
                    (w + e.current_label.hamming(gt), t + e.current_label.len())
                });
                if total == 0 {
                    0.0
                } else {
                    wrong as f64 / total as f64
                }
            });
            (Some(frac), token)
        } else {
            (None, None)
        };
        DatasetStats {
            size: self.len(),
            label_counts,
            noise_fraction,
            token_noise_fraction,
            filtered: self.filtered_count(),
            auto_corrected: self.count_source(Source::AutoCorrected),
            human_annotated: self.count_source(Source::HumanAnnotated),
        }
    }

    fn count_source(&self, source: Source) -> usize {
        self.examples.iter().filter(|e| e.source == source).count()
    }
}

fn validate_example(space: &LabelSpace, e: &Example) -> Result<()> {
    let bad = |message: String| Error::InvalidLabel {
        id: e.id.clone(),
        message,
    };
    for label in [Some(&e.original_label), Some(&e.current_label), e.ground_truth.as_ref()]
        .into_iter()
        .flatten()
    {
        if !space.check(label) {
            return Err(bad("label does not fit the label space".into()));
        }
        if let Label::Tags(tags) = label {
            match e.input.token_count() {
                Some(n) if n == tags.len() => {}
                Some(n) => return Err(bad(format!("{} tags for {} tokens", tags.len(), n))),
                None => return Err(bad("sequence labels need a token-list input".into())),
            }
        }
    }
    match e.source {
        Source::Original if e.current_label != e.original_label => {
            Err(bad("source Original but current label differs from original".into()))
        }
        Source::HumanAnnotated if e.filtered => Err(bad("human-annotated example marked filtered".into())),
        _ => Ok(()),
    }
}
