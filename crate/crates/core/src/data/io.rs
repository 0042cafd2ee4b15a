//! JSONL / CSV ingestion and JSONL serialization.
//!
//! JSONL records: `{"id": str, "input": str | [str], "label": str | [str], "ground_truth": str | [str] | null}`.
//! Saved datasets add optional provenance fields (`original_label`, `source`, `filtered`) so that a
//! save/load cycle restores the exact state; plain ingestion files omit them.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::example::{Example, Source};
use super::label::{Input, LabelSpace, LabelValue, TaskKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses the format from a file extension (`.csv` → CSV, anything else → JSONL).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RecordId {
    Str(String),
    Int(u64),
}

impl RecordId {
    fn into_string(self) -> String {
        match self {
            RecordId::Str(s) => s,
            RecordId::Int(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: RecordId,
    input: Input,
    label: LabelValue,
    #[serde(default)]
    ground_truth: Option<LabelValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_label: Option<LabelValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    filtered: bool,
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    id: String,
    input: String,
    label: String,
    #[serde(default)]
    ground_truth: Option<String>,
}

/// Loads a dataset. With `label_space = None` the space is inferred from the
/// labels present (sorted by name; task kind from the label shape).
pub fn load_dataset(path: &Path, format: DataFormat, label_space: Option<&LabelSpace>) -> Result<Dataset> {
    let records = match format {
        DataFormat::Jsonl => read_jsonl(path)?,
        DataFormat::Csv => read_csv(path, label_space)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    from_records(name, records, label_space)
}

/// Loads a label space file (`{"task_kind": ..., "labels": [...]}`).
pub fn load_label_space(path: &Path) -> Result<LabelSpace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_label_space(space: &LabelSpace, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(space)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, Record)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn read_csv(path: &Path, label_space: Option<&LabelSpace>) -> Result<Vec<(usize, Record)>> {
    if label_space.is_some_and(|s| s.kind() != TaskKind::Classification) {
        return Err(Error::InvalidArgument(
            "CSV input is only supported for classification".into(),
        ));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CsvRecord>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Malformed {
            line,
            message: e.to_string(),
        })?;
        out.push((
            line,
            Record {
                id: RecordId::Str(row.id),
                input: Input::Text(row.input),
                label: LabelValue::One(row.label),
                ground_truth: row.ground_truth.filter(|g| !g.is_empty()).map(LabelValue::One),
                original_label: None,
                source: None,
                filtered: false,
            },
        ));
    }
    Ok(out)
}

fn infer_label_space(records: &[(usize, Record)]) -> Result<LabelSpace> {
    let (_, first) = records.first().ok_or(Error::EmptyDataset)?;
    let kind = match first.label {
        LabelValue::One(_) => TaskKind::Classification,
        LabelValue::Many(_) => TaskKind::SequenceLabeling,
    };
    let mut names = BTreeSet::new();
    for (line, rec) in records {
        for value in [Some(&rec.label), rec.ground_truth.as_ref(), rec.original_label.as_ref()]
            .into_iter()
            .flatten()
        {
            match (kind, value) {
                (TaskKind::Classification, LabelValue::One(n)) => {
                    names.insert(n.clone());
                }
                (TaskKind::SequenceLabeling, LabelValue::Many(tags)) => names.extend(tags.iter().cloned()),
                _ => {
                    return Err(Error::Malformed {
                        line: *line,
                        message: "label shape differs from the first record".into(),
                    })
                }
            }
        }
    }
    LabelSpace::new(kind, names)
}

fn from_records(name: String, records: Vec<(usize, Record)>, label_space: Option<&LabelSpace>) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let space = match label_space {
        Some(s) => s.clone(),
        None => infer_label_space(&records)?,
    };
    let has_provenance = records.iter().any(|(_, r)| r.source.is_some() || r.filtered);
    let mut examples = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let encode = |v: &LabelValue| {
            space.encode(v).map_err(|e| match e {
                Error::UnknownLabel { label, .. } => Error::UnknownLabel {
                    line: Some(line),
                    label,
                },
                other => Error::Malformed {
                    line,
                    message: other.to_string(),
                },
            })
        };
        let current = encode(&rec.label)?;
        let ground_truth = rec.ground_truth.as_ref().map(encode).transpose()?;
        let original = rec.original_label.as_ref().map(encode).transpose()?;
        let mut ex = Example::new(rec.id.into_string(), rec.input, current.clone(), ground_truth);
        if let Some(orig) = original {
            ex.original_label = orig;
        }
        ex.source = rec.source.unwrap_or(Source::Original);
        ex.filtered = rec.filtered;
        ex.current_label = current;
        examples.push(ex);
    }
    if has_provenance {
        Dataset::with_state(name, space, examples)
    } else {
        Dataset::new(name, space, examples)
    }
}

/// Writes the dataset as JSONL, one record per example, including provenance fields.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let space = dataset.label_space();
    for e in dataset.examples() {
        let rec = Record {
            id: RecordId::Str(e.id().to_string()),
            input: e.input().clone(),
            label: space.decode(e.current_label()),
            ground_truth: e.ground_truth().map(|g| space.decode(g)),
            original_label: (e.source() != Source::Original).then(|| space.decode(e.original_label())),
            source: (e.source() != Source::Original).then_some(e.source()),
            filtered: e.is_filtered(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|err| Error::io("<writer>", err))?;
    }
    Ok(())
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(dataset, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn atis_space() -> LabelSpace {
        LabelSpace::classification(["flight", "airfare", "airline"]).unwrap()
    }

    #[test]
    fn loads_three_records() {
        let f = write_tmp(
            r#"{"id": "1", "input": "show me flights", "label": "flight", "ground_truth": "flight"}
{"id": "2", "input": "how much is it", "label": "flight", "ground_truth": "airfare"}
{"id": "3", "input": "which airline", "label": "airline", "ground_truth": null}
"#,
            ".jsonl",
        );
        let d = load_dataset(f.path(), DataFormat::Jsonl, Some(&atis_space())).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d
            .examples()
            .iter()
            .all(|e| e.source() == Source::Original && !e.is_filtered()));
        assert_eq!(d.get("2").unwrap().ground_truth(), Some(&Label::Class(1)));
        assert_eq!(d.get("3").unwrap().ground_truth(), None);
    }

    #[test]
    fn multi_label_is_unknown() {
        let f = write_tmp(
            "{\"id\": \"1\", \"input\": \"x\", \"label\": \"flight\"}\n{\"id\": \"2\", \"input\": \"fare and flight\", \"label\": \"airfare+flight\"}\n",
            ".jsonl",
        );
        let err = load_dataset(f.path(), DataFormat::Jsonl, Some(&atis_space())).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { line: Some(2), .. }), "{err}");
        assert!(err.to_string().contains("unknown label"));
    }

    #[test]
    fn empty_file_is_error() {
        let f = write_tmp("\n\n", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Jsonl, None),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = write_tmp(
            "{\"id\": \"1\", \"input\": \"x\", \"label\": \"a\"}\n{not json}\n",
            ".jsonl",
        );
        let err = load_dataset(f.path(), DataFormat::Jsonl, None).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let f = write_tmp(
            "{\"id\": \"1\", \"input\": \"x\", \"label\": \"a\"}\n{\"id\": \"1\", \"input\": \"y\", \"label\": \"b\"}\n",
            ".jsonl",
        );
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Jsonl, None),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn csv_classification() {
        let f = write_tmp(
            "id,input,label,ground_truth\n1,show flights,flight,flight\n2,\"fares, please\",flight,airfare\n3,hi,airline,\n",
            ".csv",
        );
        assert_eq!(DataFormat::from_path(f.path()), DataFormat::Csv);
        let d = load_dataset(f.path(), DataFormat::Csv, Some(&atis_space())).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.get("2").unwrap().input(), &Input::Text("fares, please".into()));
        assert_eq!(d.get("3").unwrap().ground_truth(), None);
    }

    #[test]
    fn infers_sequence_space() {
        let f = write_tmp(
            r#"{"id": "s1", "input": ["John", "lives", "here"], "label": ["B-PER", "O", "O"], "ground_truth": ["B-PER", "O", "B-LOC"]}
"#,
            ".jsonl",
        );
        let d = load_dataset(f.path(), DataFormat::Jsonl, None).unwrap();
        assert_eq!(d.kind(), TaskKind::SequenceLabeling);
        assert_eq!(d.label_space().names(), ["B-LOC", "B-PER", "O"]);
    }

    #[test]
    fn sequence_length_mismatch_rejected() {
        let f = write_tmp(
            r#"{"id": "s1", "input": ["John", "lives"], "label": ["B-PER", "O", "O"]}
"#,
            ".jsonl",
        );
        assert!(load_dataset(f.path(), DataFormat::Jsonl, None).is_err());
    }
}
