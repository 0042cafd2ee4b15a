use std::path::PathBuf;

use thiserror::Error;

use crate::annotator::AnnotatorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("{}unknown label {label:?}", line_prefix(*.line))]
    UnknownLabel { line: Option<usize>, label: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown example id {0:?}")]
    UnknownId(String),

    #[error("example {0:?} is already human-annotated; pass an explicit override to re-annotate")]
    AlreadyAnnotated(String),

    #[error("invalid label for example {id:?}: {message}")]
    InvalidLabel { id: String, message: String },

    #[error("every example is filtered; the training view would be empty")]
    AllFiltered,

    #[error("invalid label space: {0}")]
    LabelSpace(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("ground truth required: {0}")]
    GroundTruthRequired(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "noise target unreachable: changed {achieved} of {target} labels (achieved fraction {achieved_fraction:.4})"
    )]
    NoiseTargetUnreachable {
        achieved: usize,
        target: usize,
        achieved_fraction: f64,
    },

    #[error("missing run artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Annotator(#[from] AnnotatorError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn line_prefix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }
}
