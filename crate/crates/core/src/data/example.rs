use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::label::{Input, Label};

/// Where an example's current label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Original,
    AutoCorrected,
    HumanAnnotated,
}

/// One dataset record with its provenance state.
///
/// Fields are read through accessors; all mutation goes through [`super::Dataset`]
/// so the provenance invariants hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub(crate) id: String,
    pub(crate) input: Input,
    pub(crate) original_label: Label,
    pub(crate) current_label: Label,
    pub(crate) ground_truth: Option<Label>,
    pub(crate) source: Source,
    pub(crate) filtered: bool,
}

impl Example {
    pub fn new(id: impl Into<String>, input: Input, label: Label, ground_truth: Option<Label>) -> Self {
        Self {
            id: id.into(),
            input,
            current_label: label.clone(),
            original_label: label,
            ground_truth,
            source: Source::Original,
            filtered: false,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn input(&self) -> &Input {
        &self.input
    }

    pub fn original_label(&self) -> &Label {
        &self.original_label
    }

    pub fn current_label(&self) -> &Label {
        &self.current_label
    }

    pub fn ground_truth(&self) -> Option<&Label> {
        self.ground_truth.as_ref()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn is_filtered(&self) -> bool {
        self.filtered
    }

    pub fn is_human(&self) -> bool {
        self.source == Source::HumanAnnotated
    }

    /// Current label disagrees with ground truth. `None` without ground truth.
    pub fn is_misannotated(&self) -> Option<bool> {
        self.ground_truth.as_ref().map(|gt| *gt != self.current_label)
    }
}

/// Orders example ids: numeric ids numerically and before non-numeric ids,
/// which compare lexicographically.
pub fn id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_ids_order_numerically() {
        assert_eq!(id_cmp("3", "7"), Ordering::Less);
        assert_eq!(id_cmp("10", "9"), Ordering::Greater);
        assert_eq!(id_cmp("9", "a"), Ordering::Less);
        assert_eq!(id_cmp("b", "a"), Ordering::Greater);
        assert_eq!(id_cmp("007", "7"), Ordering::Less);
    }
}
