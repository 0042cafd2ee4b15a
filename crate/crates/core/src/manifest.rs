//! Run manifest: enough to re-execute a run with an oracle or replay annotator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{write_jsonl, Dataset};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: String,
    pub size: usize,
    /// sha256 of the dataset's canonical JSONL serialization.
    pub fingerprint: String,
}

impl DatasetRef {
    pub fn new(path: impl Into<String>, d: &Dataset) -> Result<Self> {
        Ok(Self {
            path: path.into(),
            size: d.len(),
            fingerprint: dataset_fingerprint(d)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config: EngineConfig,
    pub dataset: DatasetRef,
    pub test: DatasetRef,
    /// `oracle`, `replay:<path>` or `serve`.
    pub annotator: String,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Hex sha256 of the canonical JSONL form; independent of the source file's
/// formatting, so re-serializing a dataset never changes it.
pub fn dataset_fingerprint(d: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(d, &mut buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}
