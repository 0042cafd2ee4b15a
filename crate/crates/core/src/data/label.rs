use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Name of the tag every sequence-labeling space must contain.
pub const OUTSIDE_TAG: &str = "O";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Classification,
    SequenceLabeling,
}

/// Ordered set of class names (classification) or token tags (sequence labeling).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    kind: TaskKind,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceRepr {
    task_kind: TaskKind,
    labels: Vec<String>,
}

impl Serialize for LabelSpace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LabelSpaceRepr {
            task_kind: self.kind,
            labels: self.names.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = LabelSpaceRepr::deserialize(d)?;
        LabelSpace::new(repr.task_kind, repr.labels).map_err(serde::de::Error::custom)
    }
}

impl LabelSpace {
    pub fn new<S: Into<String>>(kind: TaskKind, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::LabelSpace("label names must be non-empty".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::LabelSpace(format!("duplicate label name {name:?}")));
            }
        }
        if names.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        if kind == TaskKind::SequenceLabeling && !index.contains_key(OUTSIDE_TAG) {
            return Err(Error::LabelSpace(format!(
                "sequence labeling requires an outside tag {OUTSIDE_TAG:?}"
            )));
        }
        Ok(Self { kind, names, index })
    }

    pub fn classification<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(TaskKind::Classification, names)
    }

    pub fn sequence<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(TaskKind::SequenceLabeling, tags)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Index of the outside tag, for sequence spaces.
    pub fn outside_index(&self) -> Option<usize> {
        self.index_of(OUTSIDE_TAG)
    }

    /// Converts a wire value to an index-based label.
    pub fn encode(&self, value: &LabelValue) -> Result<Label> {
        let lookup = |name: &str| {
            self.index_of(name).ok_or_else(|| Error::UnknownLabel {
                line: None,
                label: name.to_string(),
            })
        };
        match (self.kind, value) {
            (TaskKind::Classification, LabelValue::One(name)) => Ok(Label::Class(lookup(name)?)),
            (TaskKind::SequenceLabeling, LabelValue::Many(tags)) => {
                Ok(Label::Tags(tags.iter().map(|t| lookup(t)).collect::<Result<_>>()?))
            }
            (TaskKind::Classification, LabelValue::Many(_)) => Err(Error::LabelSpace(
                "classification labels must be a single string".into(),
            )),
            (TaskKind::SequenceLabeling, LabelValue::One(_)) => {
                Err(Error::LabelSpace("sequence labels must be a list of tags".into()))
            }
        }
    }

    pub fn decode(&self, label: &Label) -> LabelValue {
        match label {
            Label::Class(c) => LabelValue::One(self.names[*c].clone()),
            Label::Tags(tags) => LabelValue::Many(tags.iter().map(|&t| self.names[t].clone()).collect()),
        }
    }

    /// Checks that `label` has the right shape and in-range indices.
    pub fn check(&self, label: &Label) -> bool {
        match (self.kind, label) {
            (TaskKind::Classification, Label::Class(c)) => *c < self.len(),
            (TaskKind::SequenceLabeling, Label::Tags(tags)) => tags.iter().all(|&t| t < self.len()),
            _ => false,
        }
    }
}

/// Index-based label: one class, or one tag per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Tags(Vec<usize>),
}

impl Label {
    /// Number of tokens covered (1 for classification).
    pub fn len(&self) -> usize {
        match self {
            Label::Class(_) => 1,
            Label::Tags(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of positions where `self` and `other` disagree.
    pub fn hamming(&self, other: &Label) -> usize {
        match (self, other) {
            (Label::Class(a), Label::Class(b)) => usize::from(a != b),
            (Label::Tags(a), Label::Tags(b)) => {
                a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
            }
            _ => self.len().max(other.len()),
        }
    }

    pub fn as_class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Tags(_) => None,
        }
    }
}

/// Label as it appears on the wire: a class name or a list of tag names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    One(String),
    Many(Vec<String>),
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelValue::One(s) => f.write_str(s),
            LabelValue::Many(v) => write!(f, "[{}]", v.join(" ")),
        }
    }
}

/// Example input: raw text, or a pre-tokenized sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    Text(String),
    Tokens(Vec<String>),
}

impl Input {
    pub fn token_count(&self) -> Option<usize> {
        match self {
            Input::Text(_) => None,
            Input::Tokens(t) => Some(t.len()),
        }
    }

    /// Text form: tokens are joined by single spaces.
    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        match self {
            Input::Text(s) => std::borrow::Cow::Borrowed(s),
            Input::Tokens(t) => std::borrow::Cow::Owned(t.join(" ")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_spaces() {
        assert!(LabelSpace::classification(["a"]).is_err());
        assert!(LabelSpace::classification(["a", "a"]).is_err());
        assert!(LabelSpace::classification(["a", ""]).is_err());
        assert!(LabelSpace::sequence(["B-PER", "I-PER"]).is_err());
        assert!(LabelSpace::sequence(["O", "B-PER"]).is_ok());
    }

    #[test]
    fn encode_decode() {
        let space = LabelSpace::classification(["flight", "airfare"]).unwrap();
        let l = space.encode(&LabelValue::One("airfare".into())).unwrap();
        assert_eq!(l, Label::Class(1));
        assert_eq!(space.decode(&l), LabelValue::One("airfare".into()));
        let err = space.encode(&LabelValue::One("airfare+flight".into())).unwrap_err();
        assert!(err.to_string().contains("unknown label"));
    }

    #[test]
    fn hamming_counts_token_differences() {
        let a = Label::Tags(vec![0, 1, 2, 0]);
        let b = Label::Tags(vec![0, 2, 2, 1]);
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(Label::Class(1).hamming(&Label::Class(1)), 0);
    }

    #[test]
    fn label_space_serde_validates() {
        let json = r#"{"task_kind":"Classification","labels":["x","x"]}"#;
        assert!(serde_json::from_str::<LabelSpace>(json).is_err());
        let json = r#"{"task_kind":"SequenceLabeling","labels":["O","B-LOC"]}"#;
        let s: LabelSpace = serde_json::from_str(json).unwrap();
        assert_eq!(s.outside_index(), Some(0));
    }
}
