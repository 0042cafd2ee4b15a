//! Dataset representation and label provenance bookkeeping.

mod dataset;
mod example;
mod io;
mod label;

pub use dataset::{Dataset, DatasetStats, TrainingPair};
pub use example::{id_cmp, Example, Source};
pub use io::{load_dataset, load_label_space, save_jsonl, save_label_space, write_jsonl, DataFormat};
pub use label::{Input, Label, LabelSpace, LabelValue, TaskKind, OUTSIDE_TAG};
