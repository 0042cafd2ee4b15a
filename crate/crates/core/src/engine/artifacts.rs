//! On-disk run layout.
//!
//! ```text
//! run_dir/
//!   iteration_<k>.json     one IterationRecord per iteration
//!   flags_<k>.jsonl        flagged examples with scores and model predictions
//!   history.csv            one row per iteration
//!   checkpoint.json        resumable engine state
//!   baseline.json          metrics of the model trained before iteration 1
//!   dataset_corrected.jsonl
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::IterationRecord;
use crate::annotator::ModelPrediction;
use crate::data::{save_jsonl, Dataset, Input, LabelValue};
use crate::error::{Error, Result};

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const CORRECTED_FILE: &str = "dataset_corrected.jsonl";
pub const OUTCOME_FILE: &str = "outcome.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABEL_SPACE_FILE: &str = "label_space.json";

pub const HISTORY_COLUMNS: [&str; 14] = [
    "k",
    "m_flag",
    "m_corr",
    "auto_corrected",
    "m_filter",
    "p_mp",
    "token_p_mp",
    "eta_k",
    "accuracy",
    "macro_f1",
    "token_precision",
    "token_recall",
    "token_f1",
    "cumulative_annotated_fraction",
];

/// One line of `flags_<k>.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagEntry {
    pub id: String,
    pub score: f64,
    pub input: Input,
    pub current_label: LabelValue,
    pub model_prediction: ModelPrediction,
}

pub fn iteration_file(k: usize) -> String {
    format!("iteration_{k}.json")
}

pub fn flags_file(k: usize) -> String {
    format!("flags_{k}.jsonl")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders `history.csv`. Floats use the shortest round-tripping representation,
/// so the output is byte-identical for identical records.
pub fn history_csv(records: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_COLUMNS)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.m_flag.to_string(),
            r.m_corr.to_string(),
            r.auto_corrected.to_string(),
            r.m_filter.to_string(),
            r.p_mp.to_string(),
            opt(r.token_p_mp),
            r.eta_k.to_string(),
            r.eval.accuracy.to_string(),
            r.eval.macro_f1.to_string(),
            opt(r.eval.token_precision),
            opt(r.eval.token_recall),
            opt(r.eval.token_f1),
            r.cumulative_annotated_fraction.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writer for one run directory.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    dir: PathBuf,
}

impl RunArtifacts {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes through a temp file and renames, so readers never see a partial file.
    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_iteration(&self, record: &IterationRecord) -> Result<()> {
        self.write_json(&iteration_file(record.iteration), record)
    }

    pub fn write_flags(&self, k: usize, entries: &[FlagEntry]) -> Result<()> {
        let path = self.path(&flags_file(k));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for entry in entries {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn write_history(&self, records: &[IterationRecord]) -> Result<()> {
        self.write_bytes(HISTORY_FILE, history_csv(records)?.as_bytes())
    }

    pub fn write_dataset(&self, dataset: &Dataset) -> Result<()> {
        save_jsonl(dataset, &self.path(CORRECTED_FILE))
    }
}

/// Reads every `iteration_<k>.json` of a run directory, ordered by `k`.
pub fn read_iteration_records(dir: &Path) -> Result<Vec<IterationRecord>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let is_record = name
            .strip_prefix("iteration_")
            .and_then(|s| s.strip_suffix(".json"))
            .is_some_and(|k| k.parse::<usize>().is_ok());
        if !is_record {
            continue;
        }
        let path = entry.path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        records.push(serde_json::from_str::<IterationRecord>(&text)?);
    }
    records.sort_by_key(|r| r.iteration);
    Ok(records)
}
