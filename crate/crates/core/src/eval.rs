//! Scoring and blending of model outputs.
//!
//! A [`RunRecord`] carries one model's per-sample probabilities. Records can
//! be blended by a convex combination ([`blend`]), scored with macro F1,
//! swept over subtask-A thresholds and collected into a results [`Report`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Activation, Decision, TaskId, TaskSpec};
use crate::head::decide;

pub const BLEND_WEIGHT_TOLERANCE: f64 = 1e-9;
/// Weights of the shipped two-model blend preset.
pub const DEFAULT_BLEND_WEIGHTS: [f64; 2] = [0.6, 0.4];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold has {gold} entries, predictions {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    Empty,
    #[error("class index {index} out of range for {num_classes} classes")]
    OutOfRange { index: usize, num_classes: usize },
    #[error("a blend needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("blend weights must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("blend weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("no record for blend member `{0}`")]
    MissingMember(String),
    #[error("record `{run}` is for task {found}, expected {expected}")]
    TaskMismatch { run: String, expected: TaskId, found: TaskId },
    #[error("records `{0}` and `{1}` cover different samples")]
    Misaligned(String, String),
    #[error("record `{run}`: {reason}")]
    BadRecord { run: String, reason: String },
    #[error("threshold sweep needs scalar probabilities")]
    NotScalar,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("no gold label for sample `{0}`")]
    MissingGold(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub encoders: Vec<String>,
    pub fingerprint: String,
    /// Set on blends.
    pub composite: bool,
}

/// One model's outputs on an ordered list of samples. For subtask A each
/// probability vector holds the single positive-class probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task_id: TaskId,
    pub sample_ids: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub decisions: Vec<usize>,
    pub metadata: RunMetadata,
}

impl RunRecord {
    /// Builds a record and derives decisions with the task's decision rule.
    pub fn new(
        run_id: impl Into<String>,
        task: &TaskSpec,
        sample_ids: Vec<String>,
        probabilities: Vec<Vec<f64>>,
        metadata: RunMetadata,
    ) -> Result<Self, EvalError> {
        let record = RunRecord {
            run_id: run_id.into(),
            task_id: task.task_id,
            decisions: decide(task, &probabilities),
            sample_ids,
            probabilities,
            metadata,
        };
        record.validate(task)?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<(), EvalError> {
        let bad = |reason: String| EvalError::BadRecord { run: self.run_id.clone(), reason };
        if self.task_id != task.task_id {
            return Err(EvalError::TaskMismatch { run: self.run_id.clone(), expected: task.task_id, found: self.task_id });
        }
        if self.probabilities.len() != self.sample_ids.len() || self.decisions.len() != self.sample_ids.len() {
            return Err(bad("ids, probabilities and decisions differ in length".into()));
        }
        for (id, p) in self.sample_ids.iter().zip(&self.probabilities) {
            if p.len() != task.num_outputs() {
                return Err(bad(format!("sample `{id}` has {} outputs, expected {}", p.len(), task.num_outputs())));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(bad(format!("sample `{id}` has a probability outside [0, 1]")));
            }
            if task.activation == Activation::Softmax && (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(bad(format!("sample `{id}` probabilities do not sum to 1")));
            }
        }
        Ok(())
    }
}

/// Per-class F1 in class order. A class with no true positives has F1 0,
/// including classes absent from both gold and predictions.
pub fn per_class_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<f64>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tp = vec![0usize; num_classes];
    let mut gold_count = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        for index in [g, p] {
            if index >= num_classes {
                return Err(EvalError::OutOfRange { index, num_classes });
            }
        }
        gold_count[g] += 1;
        pred_count[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            // 2PR / (P + R) reduces to 2tp / (|pred| + |gold|); one division keeps it exact
            if tp[c] == 0 {
                return 0.0;
            }
            (2 * tp[c]) as f64 / (pred_count[c] + gold_count[c]) as f64
        })
        .collect())
}

pub fn macro_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<f64, EvalError> {
    let f1 = per_class_f1(gold, pred, num_classes)?;
    Ok(f1.iter().sum::<f64>() / num_classes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub members: Vec<(String, f64)>,
}

impl BlendSpec {
    pub fn new(members: Vec<(String, f64)>) -> Result<Self, EvalError> {
        let spec = BlendSpec { members };
        spec.validate()?;
        Ok(spec)
    }

    /// `0.6 * better + 0.4 * other`.
    pub fn weighted_pair(better: impl Into<String>, other: impl Into<String>) -> Self {
        BlendSpec { members: vec![(better.into(), DEFAULT_BLEND_WEIGHTS[0]), (other.into(), DEFAULT_BLEND_WEIGHTS[1])] }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.members.len() < 2 {
            return Err(EvalError::TooFewMembers(self.members.len()));
        }
        if let Some(&(_, w)) = self.members.iter().find(|(_, w)| !(*w > 0.0)) {
            return Err(EvalError::NonPositiveWeight(w));
        }
        let sum: f64 = self.members.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > BLEND_WEIGHT_TOLERANCE {
            return Err(EvalError::WeightSum(sum));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.members.iter().map(|(id, w)| format!("{w}*{id}")).collect();
        format!("blend({})", parts.join("+"))
    }
}

/// Weighted average of member probabilities, aligned by sample id to the
/// first member's order, followed by the task's decision rule.
pub fn blend(records: &[RunRecord], spec: &BlendSpec, task: &TaskSpec) -> Result<RunRecord, EvalError> {
    spec.validate()?;
    let members: Vec<(&RunRecord, f64)> = spec
        .members
        .iter()
        .map(|(id, w)| {
            records
                .iter()
                .find(|r| &r.run_id == id)
                .map(|r| (r, *w))
                .ok_or_else(|| EvalError::MissingMember(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    for (record, _) in &members {
        record.validate(task)?;
    }

    let (anchor, _) = members[0];
    let order = &anchor.sample_ids;
    let mut blended = vec![vec![0.0; task.num_outputs()]; order.len()];
    for (record, weight) in &members {
        let index: HashMap<&str, usize> =
            record.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if index.len() != order.len() || record.sample_ids.len() != order.len() {
            return Err(EvalError::Misaligned(anchor.run_id.clone(), record.run_id.clone()));
        }
        for (out, id) in blended.iter_mut().zip(order) {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| EvalError::Misaligned(anchor.run_id.clone(), record.run_id.clone()))?;
            for (o, p) in out.iter_mut().zip(&record.probabilities[i]) {
                *o += weight * p;
            }
        }
    }

    let mut encoders = Vec::new();
    for (record, _) in &members {
        encoders.extend(record.metadata.encoders.iter().cloned());
    }
    let metadata = RunMetadata { encoders, fingerprint: spec.label(), composite: true };
    let mut record = RunRecord::new(spec.label(), task, order.clone(), blended, metadata)?;
    // guard against rounding drift pushing a probability just past 1
    for p in record.probabilities.iter_mut().flatten() {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(record)
}

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<(f64, f64)>,
    pub best_threshold: f64,
    pub best_f1: f64,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,macro_f1\n");
        for (t, f) in &self.rows {
            let _ = writeln!(out, "{t:.2},{f:.6}");
        }
        out
    }
}

/// Re-decides a subtask-A record at each threshold and scores it. The best
/// threshold is the lowest one reaching the maximum F1.
pub fn threshold_sweep(record: &RunRecord, gold: &[usize], grid: &[f64]) -> Result<SweepResult, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if record.probabilities.iter().any(|p| p.len() != 1) {
        return Err(EvalError::NotScalar);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let pred: Vec<usize> = record.probabilities.iter().map(|p| usize::from(p[0] >= t)).collect();
        rows.push((t, macro_f1(gold, &pred, 2)?));
    }
    let (best_threshold, best_f1) = rows
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, f)| match best {
            Some((_, bf)) if f <= bf => best,
            _ => Some((t, f)),
        })
        .expect("non-empty grid");
    Ok(SweepResult { rows, best_threshold, best_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub task: TaskId,
    pub macro_f1: Option<f64>,
    pub per_class_f1: Vec<f64>,
    pub composite: bool,
    /// Reason a roster entry produced no score.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Subtask-A threshold in force for the rows, when relevant.
    pub threshold: Option<f64>,
}

/// Gold class per sample id.
pub type GoldLabels = HashMap<String, usize>;

/// Scores a record against gold labels looked up by sample id.
pub fn score_record(record: &RunRecord, gold: &GoldLabels, task: &TaskSpec) -> Result<ReportRow, EvalError> {
    let gold_classes = record
        .sample_ids
        .iter()
        .map(|id| gold.get(id).copied().ok_or_else(|| EvalError::MissingGold(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let per_class = per_class_f1(&gold_classes, &record.decisions, task.arity())?;
    let macro_value = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(ReportRow {
        model: record.run_id.clone(),
        task: record.task_id,
        macro_f1: Some(macro_value),
        per_class_f1: per_class,
        composite: record.metadata.composite,
        skipped: None,
    })
}

impl Report {
    pub fn from_records(records: &[&RunRecord], gold: &GoldLabels, task: &TaskSpec) -> Result<Self, EvalError> {
        let rows = records.iter().map(|r| score_record(r, gold, task)).collect::<Result<_, _>>()?;
        Ok(Report { rows, threshold: threshold_of(task) })
    }

    pub fn skip(&mut self, model: impl Into<String>, task: TaskId, reason: impl Into<String>) {
        self.rows.push(ReportRow {
            model: model.into(),
            task,
            macro_f1: None,
            per_class_f1: Vec::new(),
            composite: false,
            skipped: Some(reason.into()),
        });
    }

    pub fn skipped(&self) -> usize {
        self.rows.iter().filter(|r| r.skipped.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,task,macro_f1,per_class_f1,composite,skipped\n");
        for row in &self.rows {
            let f1 = row.macro_f1.map(|v| format!("{v:.6}")).unwrap_or_default();
            let per_class: Vec<String> = row.per_class_f1.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&row.model),
                row.task,
                f1,
                per_class.join(";"),
                row.composite,
                csv_field(row.skipped.as_deref().unwrap_or("")),
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len() + 2).max().unwrap_or(5).max(7);
        let mut out = format!("{:<width$} {:>4} {:>8}  per-class F1\n", "model", "task", "macro F1");
        for row in &self.rows {
            let name = if row.composite { format!("{} *", row.model) } else { row.model.clone() };
            match (&row.skipped, row.macro_f1) {
                (Some(reason), _) => {
                    let _ = writeln!(out, "{name:<width$} {:>4} {:>8}  skipped: {reason}", row.task, "-");
                }
                (None, Some(f1)) => {
                    let per_class: Vec<String> = row.per_class_f1.iter().map(|v| format!("{v:.3}")).collect();
                    let _ = writeln!(out, "{name:<width$} {:>4} {f1:>8.4}  {}", row.task, per_class.join(" "));
                }
                (None, None) => {}
            }
        }
        if let Some(t) = self.threshold {
            let _ = writeln!(out, "subtask A threshold: {t}");
        }
        if self.rows.iter().any(|r| r.composite) {
            out.push_str("* composite (blend)\n");
        }
        out
    }
}

fn threshold_of(task: &TaskSpec) -> Option<f64> {
    match task.decision {
        Decision::Threshold(t) => Some(t),
        Decision::Argmax => None,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_owned(), source }
}

/// `rewire_id,label_pred` with class names.
pub fn write_predictions<W: Write>(writer: W, record: &RunRecord, task: &TaskSpec) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["rewire_id", "label_pred"])?;
    for (id, &class) in record.sample_ids.iter().zip(&record.decisions) {
        csv.write_record([id.as_str(), task.class_names[class].as_str()])?;
    }
    csv.flush().map_err(io_err(Path::new("<predictions>")))
}

/// `rewire_id,p_0,...,p_{k-1}`; subtask A has the single column `p_0`.
pub fn write_probabilities<W: Write>(writer: W, record: &RunRecord) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(writer);
    let width = record.probabilities.first().map_or(0, Vec::len);
    let mut header = vec!["rewire_id".to_owned()];
    header.extend((0..width).map(|k| format!("p_{k}")));
    csv.write_record(&header)?;
    for (id, p) in record.sample_ids.iter().zip(&record.probabilities) {
        let mut row = vec![id.clone()];
        row.extend(p.iter().map(|v| format!("{v:.17}")));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(io_err(Path::new("<probabilities>")))
}

pub fn save_predictions(path: &Path, record: &RunRecord, task: &TaskSpec) -> Result<(), EvalError> {
    write_predictions(std::fs::File::create(path).map_err(io_err(path))?, record, task)
}

pub fn save_probabilities(path: &Path, record: &RunRecord) -> Result<(), EvalError> {
    write_probabilities(std::fs::File::create(path).map_err(io_err(path))?, record)
}

/// Reads a probability sidecar back into a record; decisions are recomputed.
pub fn read_probabilities<R: Read>(reader: R, run_id: &str, task: &TaskSpec) -> Result<RunRecord, EvalError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for record in csv.records() {
        let record = record?;
        let mut fields = record.iter();
        let id = fields.next().unwrap_or_default().to_owned();
        let p = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EvalError::BadRecord { run: run_id.to_owned(), reason: format!("sample `{id}`: {e}") })?;
        ids.push(id);
        probs.push(p);
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(EvalError::BadRecord { run: run_id.to_owned(), reason: "duplicate sample id".into() });
    }
    RunRecord::new(run_id, task, ids, probs, RunMetadata::default())
}

pub fn load_probabilities(path: &Path, task: &TaskSpec) -> Result<RunRecord, EvalError> {
    let run_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_owned();
    read_probabilities(std::fs::File::open(path).map_err(io_err(path))?, &run_id, task)
}

/// Reads `rewire_id,label_pred` into `(id, class)` pairs.
pub fn read_predictions<R: Read>(reader: R, task: &TaskSpec) -> Result<Vec<(String, usize)>, EvalError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in csv.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_owned();
        let label = record.get(1).unwrap_or_default().trim();
        let class = task.class_index(label).ok_or_else(|| EvalError::UnknownLabel(label.to_owned()))?;
        out.push((id, class));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path, task: &TaskSpec) -> Result<Vec<(String, usize)>, EvalError> {
    read_predictions(std::fs::File::open(path).map_err(io_err(path))?, task)
}

/// Aligns predictions with gold by id and returns macro F1 and per-class F1.
pub fn score_predictions(
    predictions: &[(String, usize)],
    gold: &GoldLabels,
    task: &TaskSpec,
) -> Result<(f64, Vec<f64>), EvalError> {
    let mut g = Vec::with_capacity(predictions.len());
    let mut p = Vec::with_capacity(predictions.len());
    for (id, class) in predictions {
        g.push(*gold.get(id).ok_or_else(|| EvalError::MissingGold(id.clone()))?);
        p.push(*class);
    }
    let per_class = per_class_f1(&g, &p, task.arity())?;
    Ok((per_class.iter().sum::<f64>() / per_class.len() as f64, per_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Taxonomy;

    fn task(id: TaskId) -> TaskSpec {
        Taxonomy::builtin().task(id).unwrap()
    }

    fn record(run: &str, t: &TaskSpec, probs: Vec<Vec<f64>>) -> RunRecord {
        let ids = (0..probs.len()).map(|i| format!("s{i}")).collect();
        RunRecord::new(run, t, ids, probs, RunMetadata::default()).unwrap()
    }

    #[test]
    fn macro_f1_fixtures() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        let v = macro_f1(&[1, 0, 1, 0], &[1, 1, 1, 0], 2).unwrap();
        assert!((v - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((v - 0.733_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(macro_f1(&[0, 0, 0], &[1, 1, 1], 2).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_counts_zero_support_classes() {
        // class 2 is absent from gold and predictions but still counts
        assert!((macro_f1(&[0, 1], &[0, 1], 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_errors() {
        assert!(matches!(macro_f1(&[0], &[0, 1], 2), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(macro_f1(&[], &[], 2), Err(EvalError::Empty)));
        assert!(matches!(macro_f1(&[2], &[0], 2), Err(EvalError::OutOfRange { index: 2, .. })));
    }

    #[test]
    fn blend_task_a() {
        let a = task(TaskId::A);
        let r1 = record("ft-roberta", &a, vec![vec![0.5]]);
        let r2 = record("bert", &a, vec![vec![0.2]]);
        let out = blend(&[r1, r2], &BlendSpec::weighted_pair("ft-roberta", "bert"), &a).unwrap();
        assert!((out.probabilities[0][0] - 0.38).abs() < 1e-12);
        assert_eq!(out.decisions, vec![1]);
        assert!(out.metadata.composite);
    }

    #[test]
    fn blend_task_b() {
        let b = task(TaskId::B);
        let r1 = record("e1", &b, vec![vec![0.7, 0.1, 0.1, 0.1]]);
        let r2 = record("pt", &b, vec![vec![0.1, 0.7, 0.1, 0.1]]);
        let out = blend(&[r1, r2], &BlendSpec::weighted_pair("e1", "pt"), &b).unwrap();
        for (p, e) in out.probabilities[0].iter().zip([0.46, 0.34, 0.1, 0.1]) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!(out.decisions, vec![0]);
    }

    #[test]
    fn blend_of_identical_members() {
        let b = task(TaskId::B);
        let r = record("x", &b, vec![vec![0.2, 0.3, 0.4, 0.1], vec![0.25; 4]]);
        let mut r2 = r.clone();
        r2.run_id = "y".into();
        let out = blend(&[r.clone(), r2], &BlendSpec::weighted_pair("x", "y"), &b).unwrap();
        for (a, b) in out.probabilities.iter().flatten().zip(r.probabilities.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.decisions, r.decisions);
    }

    #[test]
    fn blend_realigns_by_id() {
        let a = task(TaskId::A);
        let r1 = RunRecord::new("r1", &a, vec!["x".into(), "y".into()], vec![vec![1.0], vec![0.0]], RunMetadata::default()).unwrap();
        let r2 = RunRecord::new("r2", &a, vec!["y".into(), "x".into()], vec![vec![0.0], vec![1.0]], RunMetadata::default()).unwrap();
        let out = blend(&[r1.clone(), r2], &BlendSpec::weighted_pair("r1", "r2"), &a).unwrap();
        assert_eq!(out.probabilities, vec![vec![1.0], vec![0.0]]);

        let r3 = RunRecord::new("r3", &a, vec!["x".into(), "z".into()], vec![vec![1.0], vec![0.0]], RunMetadata::default()).unwrap();
        assert!(matches!(blend(&[r1, r3], &BlendSpec::weighted_pair("r1", "r3"), &a), Err(EvalError::Misaligned(..))));
    }

    #[test]
    fn blend_spec_validation() {
        assert!(matches!(BlendSpec::new(vec![("a".into(), 1.0)]), Err(EvalError::TooFewMembers(1))));
        assert!(matches!(BlendSpec::new(vec![("a".into(), 0.6), ("b".into(), 0.5)]), Err(EvalError::WeightSum(_))));
        assert!(matches!(BlendSpec::new(vec![("a".into(), 1.2), ("b".into(), -0.2)]), Err(EvalError::NonPositiveWeight(_))));
        assert!(BlendSpec::new(vec![("a".into(), 0.5), ("b".into(), 0.25), ("c".into(), 0.25)]).is_ok());
    }

    #[test]
    fn blend_task_mismatch() {
        let a = task(TaskId::A);
        let b = task(TaskId::B);
        let r1 = record("r1", &a, vec![vec![0.5]]);
        let r2 = record("r2", &a, vec![vec![0.5]]);
        assert!(matches!(blend(&[r1, r2], &BlendSpec::weighted_pair("r1", "r2"), &b), Err(EvalError::TaskMismatch { .. })));
    }

    #[test]
    fn sweep_grid_and_separable() {
        assert_eq!(default_grid().len(), 19);
        let a = task(TaskId::A);
        let r = record("r", &a, vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0]]);
        let sweep = threshold_sweep(&r, &[1, 0, 1, 0], &default_grid()).unwrap();
        assert!(sweep.rows.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(sweep.best_threshold, 0.05);
    }

    #[test]
    fn sweep_hand_fixture() {
        let a = task(TaskId::A);
        let probs = [0.9, 0.4, 0.3, 0.6, 0.2, 0.34];
        let r = record("r", &a, probs.iter().map(|&p| vec![p]).collect());
        let sweep = threshold_sweep(&r, &[1, 1, 0, 1, 0, 0], &default_grid()).unwrap();
        assert_eq!(sweep.best_threshold, 0.35);
        assert_eq!(sweep.best_f1, 1.0);
        // t = 0.30: 0.3 and 0.34 become positive -> class1 P=3/5 R=1, class0 P=1 R=1/3
        let at_030 = sweep.rows.iter().find(|(t, _)| *t == 0.3).unwrap().1;
        assert!((at_030 - (0.75 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_vectors() {
        let b = task(TaskId::B);
        let r = record("r", &b, vec![vec![0.25; 4]]);
        assert!(matches!(threshold_sweep(&r, &[0], &default_grid()), Err(EvalError::NotScalar)));
        let a = task(TaskId::A);
        let r = record("r", &a, vec![vec![0.5]]);
        assert!(matches!(threshold_sweep(&r, &[0], &[]), Err(EvalError::EmptyGrid)));
    }

    #[test]
    fn report_structure() {
        let a = task(TaskId::A);
        let r1 = record("bert", &a, vec![vec![0.9], vec![0.1], vec![0.6]]);
        let r2 = record("ft-roberta", &a, vec![vec![0.8], vec![0.5], vec![0.2]]);
        let blended = blend(&[r1.clone(), r2.clone()], &BlendSpec::weighted_pair("ft-roberta", "bert"), &a).unwrap();
        let gold: GoldLabels = [("s0", 1), ("s1", 0), ("s2", 1)].into_iter().map(|(k, v)| (k.to_owned(), v)).collect();

        let single = Report::from_records(&[&r1], &gold, &a).unwrap();
        assert_eq!(single.rows.len(), 1);

        let report = Report::from_records(&[&r1, &r2, &blended], &gold, &a).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[2].composite && !report.rows[0].composite);
        for row in &report.rows {
            let mean = row.per_class_f1.iter().sum::<f64>() / row.per_class_f1.len() as f64;
            assert_eq!(mean, row.macro_f1.unwrap());
        }
        assert!(report.to_text().contains("threshold: 0.35"));
        assert_eq!(report.to_csv().lines().count(), 4);

        let mut partial = gold.clone();
        partial.remove("s2");
        assert!(matches!(Report::from_records(&[&r1], &partial, &a), Err(EvalError::MissingGold(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let b = task(TaskId::B);
        let r = record("run", &b, vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]]);
        let mut buf = Vec::new();
        write_probabilities(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rewire_id,p_0,p_1,p_2,p_3\n"));
        let back = read_probabilities(buf.as_slice(), "run", &b).unwrap();
        assert_eq!(back.probabilities, r.probabilities);
        assert_eq!(back.decisions, r.decisions);

        let mut preds = Vec::new();
        write_predictions(&mut preds, &r, &b).unwrap();
        let parsed = read_predictions(preds.as_slice(), &b).unwrap();
        assert_eq!(parsed, vec![("s0".into(), 3), ("s1".into(), 0)]);
    }
}
