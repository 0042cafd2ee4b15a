//! The iterative label-correction loop.

pub mod artifacts;
mod config;
mod run;
mod scoring;

pub use artifacts::{history_csv, read_iteration_records, FlagEntry, RunArtifacts};
pub use config::{EngineConfig, StopRule, Strategy};
pub use run::{
    estimate_eta0, oracle_metrics, Checkpoint, Engine, IterationRecord, PendingIteration, RunOutcome, StopReason,
    CHECKPOINT_VERSION,
};
pub use scoring::{
    auto_correct, auto_correct_with, compute_eta, compute_mp_precision, filter_count, filter_examples,
    flag_for_annotation, flag_truth, misannotation_scores, predict_all, rank_order, scores_from_predictions,
    AnnotationOutcome, FlagSelection, FlagTruth, MisannotationScore, MpPrecision,
};
