//! Misannotation-prediction quality against ground truth, parameter sweeps and
//! run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::classifier::{Learner, Prediction};
use crate::data::{Dataset, Label};
use crate::engine::{
    artifacts, auto_correct_with, flag_for_annotation, history_csv, predict_all, read_iteration_records,
    scores_from_predictions, IterationRecord, RunOutcome, StopReason, StopRule, Strategy,
};
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::manifest::RunManifest;

const MODEL_STREAM: u64 = 0x006d_6f64_656c;
const SUBSAMPLE_STREAM: u64 = 0x7375_6273;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpEvaluation {
    pub strategy: Option<Strategy>,
    /// Flag fraction `M`.
    pub m: f64,
    /// Data-size fraction the evaluation was run on (1.0 for the full dataset).
    pub fraction: f64,
    pub iteration: usize,
    pub flagged: usize,
    pub misannotated: usize,
    /// Flagged examples that were misannotated.
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
    /// Set when nothing was misannotated; `recall` is then reported as 1.0.
    pub recall_vacuous: bool,
}

/// Precision and recall of `flagged` against the examples of `d` whose current
/// label differs from ground truth (call before annotations are applied).
pub fn mp_precision_recall(flagged: &[String], d: &Dataset) -> Result<MpEvaluation> {
    if !d.has_ground_truth() {
        return Err(Error::GroundTruthRequired(
            "MP precision/recall needs ground truth for every example".into(),
        ));
    }
    let wrong = |e: &crate::data::Example| e.is_misannotated() == Some(true);
    let misannotated = d.examples().iter().filter(|e| wrong(e)).count();
    let mut hits = 0;
    for id in flagged {
        let e = d.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        hits += usize::from(wrong(e));
    }
    let precision = if flagged.is_empty() {
        0.0
    } else {
        hits as f64 / flagged.len() as f64
    };
    let (recall, recall_vacuous) = if misannotated == 0 {
        (1.0, true)
    } else {
        (hits as f64 / misannotated as f64, false)
    };
    Ok(MpEvaluation {
        strategy: None,
        m: flagged.len() as f64 / d.len() as f64,
        fraction: 1.0,
        iteration: 1,
        flagged: flagged.len(),
        misannotated,
        hits,
        precision,
        recall,
        recall_vacuous,
    })
}

/// Seed for one sweep cell.
pub fn cell_seed(base: u64, strategy: Strategy, m: f64, fraction: f64) -> u64 {
    derive_seed(&[base, strategy.tag(), m.to_bits(), fraction.to_bits()])
}

/// First-iteration evaluation of one strategy from shared predictions.
fn evaluate_cell(
    d: &Dataset,
    preds: &[Prediction],
    strategy: Strategy,
    m: f64,
    delta: f64,
    fraction: f64,
    base_seed: u64,
) -> Result<MpEvaluation> {
    let mut work = d.clone();
    if strategy.auto_corrects() {
        auto_correct_with(preds, &mut work, delta);
    }
    let scores = scores_from_predictions(preds, &work);
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(base_seed, strategy, m, fraction));
    let selection = flag_for_annotation(&scores, &work, strategy, m, &mut rng);
    let mut eval = mp_precision_recall(&selection.ids, &work)?;
    eval.strategy = Some(strategy);
    eval.m = m;
    eval.fraction = fraction;
    Ok(eval)
}

fn check_m_values(m_values: &[f64], n: usize) -> Result<()> {
    if m_values.is_empty() {
        return Err(Error::config("M", "no M values given"));
    }
    for &m in m_values {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::config("M", format!("M must lie in (0, 1), got {m}")));
        }
        if (m * n as f64).round() < 1.0 {
            return Err(Error::config(
                "M",
                format!("M = {m} flags no examples of a {n}-example dataset"),
            ));
        }
    }
    Ok(())
}

/// Trains one model on `d` and evaluates first-iteration flagging for every
/// `(strategy, M)` pair. Rows are strategy-major, in the given orders.
pub fn sweep_m<L: Learner>(
    d: &Dataset,
    learner: &L,
    strategies: &[Strategy],
    m_values: &[f64],
    delta: f64,
    seed: u64,
) -> Result<Vec<MpEvaluation>> {
    sweep_at_fraction(d, learner, strategies, m_values, delta, seed, 1.0)
}

fn sweep_at_fraction<L: Learner>(
    d: &Dataset,
    learner: &L,
    strategies: &[Strategy],
    m_values: &[f64],
    delta: f64,
    seed: u64,
    fraction: f64,
) -> Result<Vec<MpEvaluation>> {
    if !d.has_ground_truth() {
        return Err(Error::GroundTruthRequired(
            "sweeps need ground truth for every example".into(),
        ));
    }
    check_m_values(m_values, d.len())?;
    if !(delta > 0.5 && delta <= 1.0) {
        return Err(Error::config(
            "delta",
            format!("delta must lie in (0.5, 1], got {delta}"),
        ));
    }
    let view = d.training_view()?;
    let model = learner.fit(&view, d.label_space(), derive_seed(&[seed, MODEL_STREAM]))?;
    let preds = predict_all(&model, d, learner.execution());
    let cells: Vec<(Strategy, f64)> = strategies
        .iter()
        .flat_map(|&s| m_values.iter().map(move |&m| (s, m)))
        .collect();
    learner
        .execution()
        .map_tasks(cells.len(), |i| {
            let (s, m) = cells[i];
            evaluate_cell(d, &preds, s, m, delta, fraction, seed)
        })
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSizeRow {
    pub fraction: f64,
    pub size: usize,
    pub evaluation: MpEvaluation,
}

/// Seeded subsample keeping `round(fraction · n_c)` examples of each ground-truth
/// class `c`, in dataset order. Fraction 1.0 returns the dataset unchanged.
pub fn stratified_subsample(d: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(
            "fractions",
            format!("fraction must lie in (0, 1], got {fraction}"),
        ));
    }
    if fraction == 1.0 {
        return Ok(d.clone());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, e) in d.examples().iter().enumerate() {
        let c = e
            .ground_truth()
            .and_then(Label::as_class)
            .ok_or_else(|| Error::GroundTruthRequired("stratified subsampling needs class ground truth".into()))?;
        by_class.entry(c).or_default().push(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SUBSAMPLE_STREAM, fraction.to_bits()]));
    let mut keep = Vec::new();
    for (c, mut members) in by_class {
        let n = (fraction * members.len() as f64).round() as usize;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} leaves {n} examples of class {:?}; need at least 2",
                d.label_space().name(c)
            )));
        }
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..n]);
    }
    keep.sort_unstable();
    d.subset(&keep, format!("{}@{fraction}", d.name()))
}

/// First-iteration MP evaluation at fixed `M` on stratified subsamples.
/// Duplicate fractions are dropped with a warning; rows follow first occurrence.
pub fn data_size_sweep<L: Learner>(
    d: &Dataset,
    learner: &L,
    fractions: &[f64],
    strategy: Strategy,
    m: f64,
    delta: f64,
    seed: u64,
) -> Result<Vec<DataSizeRow>> {
    if !d.has_ground_truth() {
        return Err(Error::GroundTruthRequired(
            "sweeps need ground truth for every example".into(),
        ));
    }
    let mut unique: Vec<f64> = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if unique.contains(&f) {
            warn!(fraction = f, "duplicate data-size fraction ignored");
        } else {
            unique.push(f);
        }
    }
    let subsets = unique
        .iter()
        .map(|&f| stratified_subsample(d, f, seed))
        .collect::<Result<Vec<_>>>()?;
    learner
        .execution()
        .map_tasks(unique.len(), |i| {
            let sub = &subsets[i];
            let rows = sweep_at_fraction(sub, learner, &[strategy], &[m], delta, seed, unique[i])?;
            Ok(DataSizeRow {
                fraction: unique[i],
                size: sub.len(),
                evaluation: rows.into_iter().next().expect("one cell"),
            })
        })
        .into_iter()
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "strategy",
    "M",
    "fraction",
    "size",
    "iteration",
    "flagged",
    "misannotated",
    "hits",
    "precision",
    "recall",
    "recall_vacuous",
];

/// CSV for sweep rows; `size` is empty for M sweeps.
pub fn sweep_csv<'a>(rows: impl IntoIterator<Item = (&'a MpEvaluation, Option<usize>)>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for (e, size) in rows {
        w.write_record([
            e.strategy.map(|s| s.to_string()).unwrap_or_default(),
            e.m.to_string(),
            e.fraction.to_string(),
            size.map(|s| s.to_string()).unwrap_or_default(),
            e.iteration.to_string(),
            e.flagged.to_string(),
            e.misannotated.to_string(),
            e.hits.to_string(),
            e.precision.to_string(),
            e.recall.to_string(),
            e.recall_vacuous.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const PERFORMANCE_CURVE_FILE: &str = "curve_performance.csv";
pub const PRECISION_CURVE_FILE: &str = "curve_precision.csv";
pub const REPORT_FILE: &str = "report.md";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
    pub iterations: usize,
}

fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Regenerates `history.csv`, the plot-ready curves and `report.md` from a run
/// directory's iteration records. Output depends only on the artifacts.
pub fn emit_report(run_dir: &Path) -> Result<ReportBundle> {
    let records = read_iteration_records(run_dir)?;
    if records.is_empty() {
        return Err(Error::MissingArtifact(run_dir.join(artifacts::iteration_file(1))));
    }
    let outcome: Option<RunOutcome> = read_optional(&run_dir.join(artifacts::OUTCOME_FILE))?;
    let manifest: Option<RunManifest> = read_optional(&run_dir.join(artifacts::MANIFEST_FILE))?;
    let baseline: Option<crate::classifier::Metrics> = read_optional(&run_dir.join(artifacts::BASELINE_FILE))?;
    let floor = manifest.as_ref().and_then(|m| {
        m.config.stop_rules.iter().find_map(|r| match r {
            StopRule::MpPrecisionFloor { threshold } => Some(*threshold),
            _ => None,
        })
    });

    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let path = run_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let mut files = vec![write(artifacts::HISTORY_FILE, &history_csv(&records)?)?];
    files.push(write(
        PERFORMANCE_CURVE_FILE,
        &performance_curve(&records, baseline.as_ref())?,
    )?);
    files.push(write(PRECISION_CURVE_FILE, &precision_curve(&records)?)?);
    files.push(write(
        REPORT_FILE,
        &render_markdown(&records, outcome.as_ref(), manifest.as_ref(), baseline.as_ref(), floor),
    )?);
    Ok(ReportBundle {
        files,
        iterations: records.len(),
    })
}

fn performance_curve(records: &[IterationRecord], baseline: Option<&crate::classifier::Metrics>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "k",
        "cumulative_annotated_fraction",
        "primary_metric",
        "accuracy",
        "macro_f1",
    ])?;
    if let Some(b) = baseline {
        w.write_record([
            "0".to_string(),
            "0".into(),
            b.primary().to_string(),
            b.accuracy.to_string(),
            b.macro_f1.to_string(),
        ])?;
    }
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.cumulative_annotated_fraction.to_string(),
            r.eval.primary().to_string(),
            r.eval.accuracy.to_string(),
            r.eval.macro_f1.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

fn precision_curve(records: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "p_mp", "token_p_mp", "eta_k"])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.p_mp.to_string(),
            r.token_p_mp.map(|v| v.to_string()).unwrap_or_default(),
            r.eta_k.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

fn render_markdown(
    records: &[IterationRecord],
    outcome: Option<&RunOutcome>,
    manifest: Option<&RunManifest>,
    baseline: Option<&crate::classifier::Metrics>,
    floor: Option<f64>,
) -> String {
    let mut s = String::new();
    let strategy = records[0].strategy;
    let _ = writeln!(s, "# Label-correction run report\n");
    let _ = writeln!(s, "- Strategy: {strategy}");
    if let Some(m) = manifest {
        let _ = writeln!(
            s,
            "- Dataset: {} ({} examples, sha256 {})",
            m.dataset.path, m.dataset.size, m.dataset.fingerprint
        );
        let _ = writeln!(
            s,
            "- M = {}, delta = {}, seed = {}",
            m.config.flag_fraction, m.config.delta, m.config.seed
        );
    }
    let last = records.last().expect("non-empty");
    let _ = writeln!(s, "- Iterations: {}", records.len());
    match outcome.map(|o| &o.stop) {
        Some(StopReason::Rule { rule }) => {
            let _ = writeln!(s, "- Stopped by rule: {rule}");
        }
        Some(other) => {
            let _ = writeln!(s, "- Stopped: {other}");
        }
        None => {
            let _ = writeln!(s, "- Stopped: run incomplete");
        }
    }
    if let Some(b) = baseline {
        let _ = writeln!(s, "- Baseline metric: {:.4}", b.primary());
    }
    let _ = writeln!(
        s,
        "- Final metric: {:.4} (accuracy {:.4}, macro F1 {:.4})",
        last.eval.primary(),
        last.eval.accuracy,
        last.eval.macro_f1
    );
    if let Some(r) = outcome.and_then(|o| o.oracle_reference) {
        let _ = writeln!(s, "- Oracle reference: {r:.4}");
    }
    let _ = writeln!(
        s,
        "- Cumulative annotated fraction: {:.4}\n",
        last.cumulative_annotated_fraction
    );

    let _ = writeln!(
        s,
        "| k | flagged | corrected | auto-corrected | filtered | p_MP | eta_k | metric | annotated |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in records {
        let below = floor.is_some_and(|f| r.p_mp < f);
        let p = if below {
            format!("**{:.4}** (below floor)", r.p_mp)
        } else {
            format!("{:.4}", r.p_mp)
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} |",
            r.iteration,
            r.m_flag,
            r.m_corr,
            r.auto_corrected,
            r.m_filter,
            p,
            r.eta_k,
            r.eval.primary(),
            r.cumulative_annotated_fraction
        );
    }
    if records.iter().any(|r| r.eval.token_f1.is_some()) {
        let _ = writeln!(s, "\n| k | token precision | token recall | token F1 | token p_MP |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for r in records {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.iteration,
                fmt_opt(r.eval.token_precision),
                fmt_opt(r.eval.token_recall),
                fmt_opt(r.eval.token_f1),
                fmt_opt(r.token_p_mp)
            );
        }
    }
    let _ = writeln!(
        s,
        "\nPlot-ready data: `{}`, `{}`.",
        PERFORMANCE_CURVE_FILE, PRECISION_CURVE_FILE
    );
    s
}
