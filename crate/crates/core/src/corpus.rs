//! Dataset ingestion, the three-level label taxonomy, seeded train/validation
//! splitting and per-subtask views of a labelled corpus.
//!
//! Subtask A is binary (sexist / not sexist) over every post. Subtasks B and C
//! only exist for sexist posts: a 4-way category and an 11-way fine-grained
//! vector. The loader enforces that nesting on every row.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Literal used in label columns to mark an absent label.
pub const ABSENT_LABEL: &str = "none";

/// Default positive-prediction threshold for subtask A.
pub const DEFAULT_THRESHOLD: f64 = 0.35;

/// Default seed for the fixed train/validation split.
pub const DEFAULT_SPLIT_SEED: u64 = 42;

const BUILTIN_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: duplicate sample id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: label `{label}` is not in the task {task} taxonomy")]
    UnknownLabel { row: usize, task: TaskId, label: String },
    #[error("row {row}: hierarchy violation: {reason}")]
    Hierarchy { row: usize, reason: String },
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("sample `{id}` carries label `{label}` unknown to task {task}")]
    LabelNotInTask { id: String, task: TaskId, label: String },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    A,
    B,
    C,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::A, TaskId::B, TaskId::C];
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::A => "A",
            TaskId::B => "B",
            TaskId::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(TaskId::A),
            "B" => Ok(TaskId::B),
            "C" => Ok(TaskId::C),
            other => Err(format!("unknown task `{other}` (expected A, B or C)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Threshold(f64),
    Argmax,
}

/// Definition of one subtask: its ordered classes and how probabilities are
/// turned into a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub class_names: Vec<String>,
    pub activation: Activation,
    pub decision: Decision,
}

impl TaskSpec {
    pub fn new(task_id: TaskId, class_names: Vec<String>) -> Result<Self, CorpusError> {
        let expected = match task_id {
            TaskId::A => 2,
            TaskId::B => 4,
            TaskId::C => 11,
        };
        if class_names.len() != expected {
            return Err(CorpusError::Taxonomy(format!(
                "task {task_id} needs {expected} classes, got {}",
                class_names.len()
            )));
        }
        let unique: HashSet<_> = class_names.iter().collect();
        if unique.len() != class_names.len() {
            return Err(CorpusError::Taxonomy(format!("task {task_id} has duplicate class names")));
        }
        let (activation, decision) = match task_id {
            TaskId::A => (Activation::Sigmoid, Decision::Threshold(DEFAULT_THRESHOLD)),
            TaskId::B | TaskId::C => (Activation::Softmax, Decision::Argmax),
        };
        Ok(TaskSpec { task_id, class_names, activation, decision })
    }

    /// Replaces the subtask-A threshold. No effect on argmax tasks.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        if let Decision::Threshold(_) = self.decision {
            self.decision = Decision::Threshold(threshold);
        }
        self
    }

    pub fn arity(&self) -> usize {
        self.class_names.len()
    }

    /// Width of a model's output: one sigmoid unit for A, one softmax unit per class otherwise.
    pub fn num_outputs(&self) -> usize {
        match self.activation {
            Activation::Sigmoid => 1,
            Activation::Softmax => self.arity(),
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }
}

/// Ordered class names for all three subtasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    #[serde(rename = "A")]
    pub a: Vec<String>,
    #[serde(rename = "B")]
    pub b: Vec<String>,
    #[serde(rename = "C")]
    pub c: Vec<String>,
}

impl Taxonomy {
    /// The taxonomy shipped in `data/taxonomy.json`.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let taxonomy: Taxonomy =
            serde_json::from_str(json).map_err(|e| CorpusError::Taxonomy(e.to_string()))?;
        for task in TaskId::ALL {
            taxonomy.task(task)?;
        }
        Ok(taxonomy)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let json = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
        Self::from_json(&json)
    }

    pub fn task(&self, task_id: TaskId) -> Result<TaskSpec, CorpusError> {
        let names = match task_id {
            TaskId::A => &self.a,
            TaskId::B => &self.b,
            TaskId::C => &self.c,
        };
        TaskSpec::new(task_id, names.clone())
    }

    fn not_sexist(&self) -> &str {
        &self.a[0]
    }

    fn sexist(&self) -> &str {
        &self.a[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NotSexist,
    Sexist,
}

impl BinaryLabel {
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::NotSexist => 0,
            BinaryLabel::Sexist => 1,
        }
    }
}

/// One post with up to three nested labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub text: String,
    pub label_a: Option<BinaryLabel>,
    pub label_b: Option<String>,
    pub label_c: Option<String>,
}

impl LabeledSample {
    pub fn unlabeled(sample_id: impl Into<String>, text: impl Into<String>) -> Self {
        LabeledSample {
            sample_id: sample_id.into(),
            text: text.into(),
            label_a: None,
            label_b: None,
            label_c: None,
        }
    }
}

/// Header names for each field. Label columns are optional; a dataset with
/// only `id` and `text` loads as unlabelled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub text: String,
    pub label_a: Option<String>,
    pub label_b: Option<String>,
    pub label_c: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "rewire_id".into(),
            text: "text".into(),
            label_a: Some("label_sexist".into()),
            label_b: Some("label_category".into()),
            label_c: Some("label_vector".into()),
        }
    }
}

struct ResolvedColumns {
    id: usize,
    text: usize,
    a: Option<usize>,
    b: Option<usize>,
    c: Option<usize>,
}

fn resolve_columns(
    headers: &csv::StringRecord,
    columns: &ColumnMap,
) -> Result<ResolvedColumns, CorpusError> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_owned()))
    };
    // a label column missing from the header just means that level is unlabelled
    let optional = |name: Option<&str>| name.and_then(|n| find(n).ok());
    Ok(ResolvedColumns {
        id: find(&columns.id)?,
        text: find(&columns.text)?,
        a: optional(columns.label_a.as_deref()),
        b: optional(columns.label_b.as_deref()),
        c: optional(columns.label_c.as_deref()),
    })
}

fn label_cell(record: &csv::StringRecord, column: Option<usize>) -> Option<String> {
    let value = record.get(column?)?.trim();
    if value.is_empty() || value.eq_ignore_ascii_case(ABSENT_LABEL) {
        None
    } else {
        Some(value.to_owned())
    }
}

fn parse_row(
    row: usize,
    record: &csv::StringRecord,
    cols: &ResolvedColumns,
    taxonomy: &Taxonomy,
) -> Result<LabeledSample, CorpusError> {
    let sample_id = record.get(cols.id).unwrap_or_default().to_owned();
    let text = record.get(cols.text).unwrap_or_default().to_owned();

    let label_a = match label_cell(record, cols.a) {
        None => None,
        Some(l) if l == taxonomy.sexist() => Some(BinaryLabel::Sexist),
        Some(l) if l == taxonomy.not_sexist() => Some(BinaryLabel::NotSexist),
        Some(label) => return Err(CorpusError::UnknownLabel { row, task: TaskId::A, label }),
    };
    let label_b = label_cell(record, cols.b);
    if let Some(label) = &label_b {
        if !taxonomy.b.contains(label) {
            return Err(CorpusError::UnknownLabel { row, task: TaskId::B, label: label.clone() });
        }
    }
    let label_c = label_cell(record, cols.c);
    if let Some(label) = &label_c {
        if !taxonomy.c.contains(label) {
            return Err(CorpusError::UnknownLabel { row, task: TaskId::C, label: label.clone() });
        }
    }

    let hierarchy = |reason: &str| CorpusError::Hierarchy { row, reason: reason.to_owned() };
    if label_b.is_some() && label_a != Some(BinaryLabel::Sexist) {
        return Err(hierarchy("category label on a post not labelled sexist"));
    }
    if cols.b.is_some() && label_a == Some(BinaryLabel::Sexist) && label_b.is_none() {
        return Err(hierarchy("sexist post without a category label"));
    }
    if label_c.is_some() && label_b.is_none() {
        return Err(hierarchy("fine-grained label without a category label"));
    }
    if cols.c.is_some() && label_b.is_some() && label_c.is_none() {
        return Err(hierarchy("category label without a fine-grained label"));
    }

    Ok(LabeledSample { sample_id, text, label_a, label_b, label_c })
}

/// Streaming reader over a corpus CSV. Rows are validated one at a time; the
/// duplicate-id check is left to [`load_dataset`] since it needs the whole set.
pub struct SampleReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    columns: ResolvedColumns,
    taxonomy: Taxonomy,
    row: usize,
}

impl SampleReader<File> {
    pub fn open(path: &Path, columns: &ColumnMap, taxonomy: &Taxonomy) -> Result<Self, CorpusError> {
        let file =
            File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
        Self::new(file, columns, taxonomy)
    }
}

impl<R: Read> SampleReader<R> {
    pub fn new(reader: R, columns: &ColumnMap, taxonomy: &Taxonomy) -> Result<Self, CorpusError> {
        let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = csv.headers()?.clone();
        let columns = resolve_columns(&headers, columns)?;
        Ok(SampleReader { records: csv.into_records(), columns, taxonomy: taxonomy.clone(), row: 0 })
    }
}

impl<R: Read> Iterator for SampleReader<R> {
    type Item = Result<LabeledSample, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.row += 1;
        Some(
            record
                .map_err(CorpusError::from)
                .and_then(|r| parse_row(self.row, &r, &self.columns, &self.taxonomy)),
        )
    }
}

/// Loads a whole corpus, enforcing the label hierarchy and id uniqueness.
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn load_dataset(
    path: &Path,
    columns: &ColumnMap,
    taxonomy: &Taxonomy,
) -> Result<Vec<LabeledSample>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    read_dataset(file, columns, taxonomy)
}

pub fn read_dataset<R: Read>(
    reader: R,
    columns: &ColumnMap,
    taxonomy: &Taxonomy,
) -> Result<Vec<LabeledSample>, CorpusError> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, sample) in SampleReader::new(reader, columns, taxonomy)?.enumerate() {
        let sample = sample?;
        if !seen.insert(sample.sample_id.clone()) {
            return Err(CorpusError::DuplicateId { row: i + 1, id: sample.sample_id });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes samples in the corpus CSV layout given by `columns`.
pub struct SampleWriter<W: Write> {
    csv: csv::Writer<W>,
    columns: ColumnMap,
    taxonomy: Taxonomy,
}

impl<W: Write> SampleWriter<W> {
    pub fn new(writer: W, columns: &ColumnMap, taxonomy: &Taxonomy) -> Result<Self, CorpusError> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec![columns.id.as_str(), columns.text.as_str()];
        header.extend(
            [&columns.label_a, &columns.label_b, &columns.label_c].into_iter().flatten().map(String::as_str),
        );
        csv.write_record(&header)?;
        Ok(SampleWriter { csv, columns: columns.clone(), taxonomy: taxonomy.clone() })
    }

    pub fn write(&mut self, sample: &LabeledSample) -> Result<(), CorpusError> {
        let mut record = vec![sample.sample_id.as_str(), sample.text.as_str()];
        if self.columns.label_a.is_some() {
            record.push(match sample.label_a {
                Some(BinaryLabel::Sexist) => self.taxonomy.sexist(),
                Some(BinaryLabel::NotSexist) => self.taxonomy.not_sexist(),
                None => ABSENT_LABEL,
            });
        }
        if self.columns.label_b.is_some() {
            record.push(sample.label_b.as_deref().unwrap_or(ABSENT_LABEL));
        }
        if self.columns.label_c.is_some() {
            record.push(sample.label_c.as_deref().unwrap_or(ABSENT_LABEL));
        }
        self.csv.write_record(&record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CorpusError> {
        self.csv.flush().map_err(|source| CorpusError::Io { path: PathBuf::from("<output>"), source })
    }
}

pub fn write_dataset(
    path: &Path,
    samples: &[LabeledSample],
    columns: &ColumnMap,
    taxonomy: &Taxonomy,
) -> Result<(), CorpusError> {
    let file =
        File::create(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let mut writer = SampleWriter::new(file, columns, taxonomy)?;
    for sample in samples {
        writer.write(sample)?;
    }
    writer.finish()
}

/// Count of samples per subtask-A label; unlabelled samples are not counted.
pub fn binary_counts(samples: &[LabeledSample]) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        let key = match s.label_a {
            Some(BinaryLabel::Sexist) => "sexist",
            Some(BinaryLabel::NotSexist) => "not_sexist",
            None => continue,
        };
        *counts.entry(key).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub seed: u64,
    pub fraction: f64,
}

/// Seeded shuffle then prefix split; `|train| = round_half_up(fraction * N)`.
pub fn split_train_val(
    samples: &[LabeledSample],
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    if samples.len() < 2 {
        return Err(CorpusError::TooFewSamples(samples.len()));
    }
    let n = samples.len();
    let n_train = ((fraction * n as f64) + 0.5).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let train = order[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok(DatasetSplit { train, val, seed, fraction })
}

/// One supervised example under a particular subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub sample_id: String,
    pub text: String,
    pub class: usize,
}

/// Projects samples onto a subtask. Task A keeps every sample with a binary
/// label; B and C keep only samples carrying the deeper label.
pub fn subtask_view(
    samples: &[LabeledSample],
    task: &TaskSpec,
) -> Result<Vec<TaskExample>, CorpusError> {
    let mut out = Vec::new();
    for s in samples {
        let class = match task.task_id {
            TaskId::A => match s.label_a {
                Some(label) => label.index(),
                None => continue,
            },
            TaskId::B | TaskId::C => {
                let label = match task.task_id {
                    TaskId::B => s.label_b.as_deref(),
                    _ => s.label_c.as_deref(),
                };
                let Some(label) = label else { continue };
                task.class_index(label).ok_or_else(|| CorpusError::LabelNotInTask {
                    id: s.sample_id.clone(),
                    task: task.task_id,
                    label: label.to_owned(),
                })?
            }
        };
        out.push(TaskExample { sample_id: s.sample_id.clone(), text: s.text.clone(), class });
    }
    Ok(out)
}
