//! Roster runs: train a list of encoder configurations on one split, blend
//! where asked, and collect a results table. Entries whose encoder
//! checkpoint is not available locally are skipped and flagged.

use std::collections::HashMap;

use crate::corpus::{split_train_val, subtask_view, LabeledSample, TaskId, TaskSpec, DEFAULT_SPLIT_SEED};
use crate::encoders::{EncoderError, EncoderRegistry};
use crate::eval::{blend, score_record, BlendSpec, GoldLabels, Report, RunRecord};
use crate::textclean::{clean_samples, CleaningConfig};
use crate::train::{train, TrainConfig, TrainError};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("duplicate roster entry `{0}`")]
    DuplicateEntry(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RosterEntry {
    Model { name: String, encoders: Vec<String>, clean: bool },
    Blend { name: String, members: Vec<(String, f64)> },
}

impl RosterEntry {
    pub fn model(name: &str, encoders: &[&str]) -> Self {
        RosterEntry::Model {
            name: name.to_owned(),
            encoders: encoders.iter().map(|s| (*s).to_owned()).collect(),
            clean: true,
        }
    }

    pub fn weighted_pair(better: &str, other: &str) -> Self {
        let spec = BlendSpec::weighted_pair(better, other);
        RosterEntry::Blend { name: "blend-0.6/0.4".into(), members: spec.members }
    }

    pub fn name(&self) -> &str {
        match self {
            RosterEntry::Model { name, .. } | RosterEntry::Blend { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    pub task: TaskId,
    pub entries: Vec<RosterEntry>,
}

pub const PRESETS: [&str; 4] = ["task-a", "task-b", "task-c", "uncleaned-ablation"];

impl Roster {
    /// The model lists of the published result tables.
    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        use RosterEntry as E;
        let (task, entries) = match name {
            "task-a" => (
                TaskId::A,
                vec![E::model("bert", &["bert"]), E::model("ft-roberta", &["ft-roberta"]), E::weighted_pair("ft-roberta", "bert")],
            ),
            "task-b" => (
                TaskId::B,
                vec![
                    E::model("sbert", &["sbert"]),
                    E::model("bert", &["bert"]),
                    E::model("deberta", &["deberta"]),
                    E::model("hatebert", &["hatebert"]),
                    E::model("ft-roberta", &["ft-roberta"]),
                    E::model("pt-roberta", &["pt-roberta"]),
                    E::model("ensemble1", &["ensemble1"]),
                    E::model("ensemble2", &["ensemble2"]),
                    E::weighted_pair("ensemble1", "pt-roberta"),
                ],
            ),
            "task-c" => (
                TaskId::C,
                vec![
                    E::model("pt-roberta", &["pt-roberta"]),
                    E::model("ensemble1", &["ensemble1"]),
                    E::weighted_pair("ensemble1", "pt-roberta"),
                ],
            ),
            "uncleaned-ablation" => (
                TaskId::B,
                vec![E::Model { name: "pt-roberta (raw)".into(), encoders: vec!["pt-roberta".into()], clean: false }],
            ),
            other => return Err(PipelineError::UnknownPreset(other.to_owned())),
        };
        Ok(Roster { task, entries })
    }

    /// A roster of exactly one model.
    pub fn single(task: TaskId, name: &str, encoders: Vec<String>, clean: bool) -> Self {
        Roster { task, entries: vec![RosterEntry::Model { name: name.to_owned(), encoders, clean }] }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub cleaning: CleaningConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            split_seed: DEFAULT_SPLIT_SEED,
            cleaning: CleaningConfig::shipped(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: Report,
    /// Validation-set records of every entry that ran, blends included.
    pub records: Vec<RunRecord>,
}

fn checkpoint_missing(err: &TrainError) -> Option<String> {
    match err {
        TrainError::Encoder(e @ EncoderError::CheckpointUnavailable { .. }) => Some(e.to_string()),
        _ => None,
    }
}

/// Runs every roster entry on the same seeded split. A model whose encoder
/// checkpoint is missing becomes a skipped row, as does a blend with a
/// skipped member; any other failure aborts the run.
pub fn run_roster(
    samples: &[LabeledSample],
    roster: &Roster,
    task: &TaskSpec,
    registry: &EncoderRegistry,
    config: &PipelineConfig,
) -> Result<PipelineOutcome, PipelineError> {
    let mut names = std::collections::HashSet::new();
    for entry in &roster.entries {
        if !names.insert(entry.name()) {
            return Err(PipelineError::DuplicateEntry(entry.name().to_owned()));
        }
    }

    let raw = split_train_val(samples, config.train_fraction, config.split_seed).map_err(TrainError::from)?;
    let mut cleaned = None;
    let val_view = subtask_view(&raw.val, task).map_err(TrainError::from)?;
    let gold: GoldLabels = val_view.iter().map(|e| (e.sample_id.clone(), e.class)).collect();

    let mut report = Report { rows: Vec::new(), threshold: None };
    let mut records: HashMap<String, RunRecord> = HashMap::new();
    let mut ordered = Vec::new();

    for entry in &roster.entries {
        let record = match entry {
            RosterEntry::Model { name, encoders, clean } => {
                let split = if *clean {
                    cleaned.get_or_insert_with(|| {
                        let mut split = raw.clone();
                        split.train = clean_samples(split.train, &config.cleaning).0;
                        split.val = clean_samples(split.val, &config.cleaning).0;
                        split
                    })
                } else {
                    &raw
                };
                let encoder = match registry.resolve(encoders) {
                    Ok(encoder) => encoder,
                    Err(e) => {
                        let e = TrainError::from(e);
                        match checkpoint_missing(&e) {
                            Some(reason) => {
                                log::warn!("skipping {name}: {reason}");
                                report.skip(name.clone(), task.task_id, reason);
                                continue;
                            }
                            None => return Err(e.into()),
                        }
                    }
                };
                let outcome = train(encoder, split, task, &config.train)?;
                let val = subtask_view(&split.val, task).map_err(TrainError::from)?;
                let ids: Vec<String> = val.iter().map(|e| e.sample_id.clone()).collect();
                let texts: Vec<&str> = val.iter().map(|e| e.text.as_str()).collect();
                outcome.model.predict(name, &ids, &texts)?
            }
            RosterEntry::Blend { name, members } => {
                if let Some((missing, _)) = members.iter().find(|(m, _)| !records.contains_key(m)) {
                    report.skip(name.clone(), task.task_id, format!("member `{missing}` did not run"));
                    continue;
                }
                let member_records: Vec<RunRecord> = members.iter().map(|(m, _)| records[m].clone()).collect();
                let mut record = blend(&member_records, &BlendSpec { members: members.clone() }, task)
                    .map_err(TrainError::from)?;
                record.run_id = name.clone();
                record
            }
        };
        report.rows.push(score_record(&record, &gold, task).map_err(TrainError::from)?);
        ordered.push(record.run_id.clone());
        records.insert(record.run_id.clone(), record);
    }

    if let crate::corpus::Decision::Threshold(t) = task.decision {
        report.threshold = Some(t);
    }
    let records = ordered.into_iter().filter_map(|id| records.remove(&id)).collect();
    Ok(PipelineOutcome { report, records })
}
