//! Training loop: minibatch Adam on cross-entropy, best-macro-F1
//! checkpointing and early stopping on the training loss.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, DatasetSplit, TaskExample, TaskSpec, subtask_view};
use crate::encoders::{EncoderError, EncoderRegistry, PooledEncoder};
use crate::eval::{macro_f1, EvalError, RunMetadata, RunRecord};
use crate::head::{decide, HeadError, HeadModel, HeadSnapshot, DEFAULT_DROPOUT, DEFAULT_HIDDEN_DIM};
use crate::math::fnv1a;

pub const DEFAULT_MAX_EPOCHS: usize = 200;
pub const DEFAULT_PATIENCE: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const TRAINABLE_LEARNING_RATE: f64 = 2e-5;
pub const FROZEN_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0} set has no examples for this task")]
    EmptyView(&'static str),
    #[error("class `{0}` does not occur in the training data")]
    MissingClass(String),
    #[error("checkpoint is for task {found}, expected {expected}")]
    TaskMismatch { expected: String, found: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// None picks 2e-5 for a trainable encoder and 1e-3 for a frozen one.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Skip validation and keep the last epoch.
    pub train_on_all: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            learning_rate: None,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            dropout: DEFAULT_DROPOUT,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            train_on_all: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return bad("patience must lie in [1, max_epochs)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning_rate must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }

    pub fn effective_learning_rate(&self, encoder_trainable: bool) -> f64 {
        self.learning_rate.unwrap_or(if encoder_trainable { TRAINABLE_LEARNING_RATE } else { FROZEN_LEARNING_RATE })
    }
}

/// Stops once the epoch training loss has failed to strictly improve its
/// running minimum for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, stale: 0 }
    }

    /// Records one epoch's loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }
}

/// Tracks the epoch with the best validation score; the earliest wins ties.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<(usize, f64)>,
}

impl BestTracker {
    pub fn update(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if score <= best => false,
            _ => {
                self.best = Some((epoch, score));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_macro_f1\n");
    for r in history {
        let f1 = r.val_macro_f1.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.8},{}", r.epoch, r.train_loss, f1);
    }
    out
}

/// What the loop needs from a model. Lets tests drive the loop with
/// scripted losses and scores.
pub trait EpochModel {
    type Snapshot;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, TrainError>;
    fn validate(&mut self) -> Result<f64, TrainError>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone)]
pub struct LoopOutcome<S> {
    /// Epoch (1-based) of the kept snapshot and its validation score.
    pub epoch: usize,
    pub val_macro_f1: Option<f64>,
    pub snapshot: S,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Runs epochs until `max_epochs` or early stopping. With `monitor` the
/// best-validation snapshot is kept, otherwise the last one.
pub fn run_loop<M: EpochModel>(
    model: &mut M,
    max_epochs: usize,
    patience: usize,
    monitor: bool,
) -> Result<LoopOutcome<M::Snapshot>, TrainError> {
    let mut stopper = EarlyStopping::new(patience);
    let mut tracker = BestTracker::default();
    let mut history = Vec::new();
    let mut kept = None;
    let mut stopped_early = false;

    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val = if monitor { Some(model.validate()?) } else { None };
        history.push(EpochRecord { epoch, train_loss, val_macro_f1: val });
        log::debug!("epoch {epoch}: loss {train_loss:.6} val F1 {val:?}");

        match val {
            Some(f1) if tracker.update(epoch, f1) => kept = Some((epoch, val, model.snapshot())),
            Some(_) => {}
            None => kept = Some((epoch, None, model.snapshot())),
        }
        if stopper.observe(train_loss) {
            stopped_early = epoch < max_epochs;
            break;
        }
    }
    let (epoch, val_macro_f1, snapshot) = kept.expect("at least one epoch runs");
    Ok(LoopOutcome { epoch, val_macro_f1, snapshot, history, stopped_early })
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1, beta2, epsilon }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// Serializable best-epoch state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_macro_f1: Option<f64>,
    pub task: TaskSpec,
    pub encoder_specs: Vec<String>,
    pub encoder_params: Vec<f64>,
    pub head: HeadSnapshot,
    pub fingerprint: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_vec(self).map_err(|source| TrainError::Json { path: path.to_owned(), source })?;
        std::fs::write(path, json).map_err(|source| TrainError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io { path: path.to_owned(), source })?;
        serde_json::from_slice(&bytes).map_err(|source| TrainError::Json { path: path.to_owned(), source })
    }
}

/// Hex FNV-1a of the serialized training setup.
pub fn fingerprint(config: &TrainConfig, encoder_specs: &[String], task: &TaskSpec) -> String {
    let json = serde_json::json!({ "config": config, "encoders": encoder_specs, "task": task });
    format!("{:016x}", fnv1a(json.to_string().as_bytes()))
}

/// An encoder plus head bound to a task.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: Box<dyn PooledEncoder>,
    pub head: HeadModel,
    pub task: TaskSpec,
    pub fingerprint: String,
}

impl TrainedModel {
    pub fn from_checkpoint(
        checkpoint: &Checkpoint,
        registry: &EncoderRegistry,
        task: &TaskSpec,
    ) -> Result<Self, TrainError> {
        if checkpoint.task.task_id != task.task_id || checkpoint.task.class_names != task.class_names {
            return Err(TrainError::TaskMismatch {
                expected: task.task_id.to_string(),
                found: checkpoint.task.task_id.to_string(),
            });
        }
        let mut encoder = registry.resolve(&checkpoint.encoder_specs)?;
        if encoder.num_params() > 0 {
            encoder.set_params(&checkpoint.encoder_params)?;
        }
        Ok(TrainedModel {
            encoder,
            head: HeadModel::from_snapshot(&checkpoint.head)?,
            // the caller's task wins so a different threshold can be applied
            task: task.clone(),
            fingerprint: checkpoint.fingerprint.clone(),
        })
    }

    pub fn probabilities(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, TrainError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.encoder.encode(texts)?;
        let probs = self.head.forward_eval(x.view())?;
        Ok(probs.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    pub fn predict(&self, run_id: &str, sample_ids: &[String], texts: &[&str]) -> Result<RunRecord, TrainError> {
        let probs = self.probabilities(texts)?;
        let metadata = RunMetadata {
            encoders: self.encoder.specs(),
            fingerprint: self.fingerprint.clone(),
            composite: false,
        };
        Ok(RunRecord::new(run_id, &self.task, sample_ids.to_vec(), probs, metadata)?)
    }
}

/// The real model driven by [`run_loop`].
pub struct HeadTrainer {
    pub model: TrainedModel,
    train: Vec<TaskExample>,
    val: Vec<TaskExample>,
    config: TrainConfig,
    learning_rate: f64,
    rng: ChaCha8Rng,
    head_opt: Adam,
    encoder_opt: Option<Adam>,
    // embeddings of a frozen encoder never change, so they are computed once
    cached_train: Option<Array2<f64>>,
    cached_val: Option<Array2<f64>>,
}

impl HeadTrainer {
    pub fn new(
        encoder: Box<dyn PooledEncoder>,
        head: HeadModel,
        train: Vec<TaskExample>,
        val: Vec<TaskExample>,
        task: &TaskSpec,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptyView("training"));
        }
        if val.is_empty() && !config.train_on_all {
            return Err(TrainError::EmptyView("validation"));
        }
        let mut present = vec![false; task.arity()];
        for ex in &train {
            if let Some(p) = present.get_mut(ex.class) {
                *p = true;
            }
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(TrainError::MissingClass(task.class_names[missing].clone()));
        }
        if head.input_dim != encoder.output_dim() {
            return Err(HeadError::InputWidth { expected: head.input_dim, found: encoder.output_dim() }.into());
        }

        let trainable = encoder.trainable();
        let learning_rate = config.effective_learning_rate(trainable);
        let head_opt = Adam::new(head.num_params(), config.beta1, config.beta2, config.epsilon);
        let encoder_opt =
            (trainable && encoder.num_params() > 0).then(|| Adam::new(encoder.num_params(), config.beta1, config.beta2, config.epsilon));
        let (cached_train, cached_val) = if trainable {
            (None, None)
        } else {
            fn texts(xs: &[TaskExample]) -> Vec<&str> {
                xs.iter().map(|e| e.text.as_str()).collect()
            }
            let val_cache = if val.is_empty() { None } else { Some(encoder.encode(&texts(&val))?) };
            (Some(encoder.encode(&texts(&train))?), val_cache)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);

        let specs = encoder.specs();
        Ok(HeadTrainer {
            model: TrainedModel { fingerprint: fingerprint(config, &specs, task), encoder, head, task: task.clone() },
            train,
            val,
            config: config.clone(),
            learning_rate,
            rng,
            head_opt,
            encoder_opt,
            cached_train,
            cached_val,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn checkpoint(&self, epoch: usize, val_macro_f1: Option<f64>) -> Checkpoint {
        Checkpoint {
            epoch,
            val_macro_f1,
            task: self.model.task.clone(),
            encoder_specs: self.model.encoder.specs(),
            encoder_params: self.model.encoder.params(),
            head: self.model.head.snapshot(),
            fingerprint: self.model.fingerprint.clone(),
        }
    }
}

impl EpochModel for HeadTrainer {
    type Snapshot = Checkpoint;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64, TrainError> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;

        for batch in order.chunks(self.config.batch_size) {
            let texts: Vec<&str> = batch.iter().map(|&i| self.train[i].text.as_str()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| self.train[i].class).collect();
            let x = match &self.cached_train {
                Some(cache) => cache.select(ndarray::Axis(0), batch),
                None => self.model.encoder.encode(&texts)?,
            };
            let mask = self.model.head.dropout_mask(batch.len(), &mut self.rng);
            let (loss, grads) = self.model.head.loss_and_grads(x.view(), &targets, Some(&mask))?;
            total += loss * batch.len() as f64;

            let mut params = self.model.head.params();
            self.head_opt.step(&mut params, &grads.flatten(), self.learning_rate);
            self.model.head.set_params(&params)?;

            if let Some(opt) = &mut self.encoder_opt {
                let grad = self.model.encoder.backward(&texts, grads.input.view())?;
                let mut params = self.model.encoder.params();
                opt.step(&mut params, &grad, self.learning_rate);
                self.model.encoder.set_params(&params)?;
            }
        }
        Ok(total / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<f64, TrainError> {
        let x = match &self.cached_val {
            Some(cache) => cache.clone(),
            None => {
                let texts: Vec<&str> = self.val.iter().map(|e| e.text.as_str()).collect();
                self.model.encoder.encode(&texts)?
            }
        };
        let probs: Vec<Vec<f64>> =
            self.model.head.forward_eval(x.view())?.rows().into_iter().map(|r| r.to_vec()).collect();
        let pred = decide(&self.model.task, &probs);
        let gold: Vec<usize> = self.val.iter().map(|e| e.class).collect();
        Ok(macro_f1(&gold, &pred, self.model.task.arity())?)
    }

    fn snapshot(&self) -> Checkpoint {
        self.checkpoint(0, None)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains on explicit example lists (e.g. an augmented training set).
pub fn train_examples(
    encoder: Box<dyn PooledEncoder>,
    train: Vec<TaskExample>,
    val: Vec<TaskExample>,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let head = HeadModel::new(encoder.output_dim(), config.hidden_dim, task, config.dropout, config.seed)?;
    let mut trainer = HeadTrainer::new(encoder, head, train, val, task, config)?;
    log::info!(
        "training task {} with {} ({} examples, lr {})",
        task.task_id,
        trainer.model.encoder.name(),
        trainer.train.len(),
        trainer.learning_rate
    );
    let outcome = run_loop(&mut trainer, config.max_epochs, config.patience, !config.train_on_all)?;
    let mut checkpoint = outcome.snapshot;
    checkpoint.epoch = outcome.epoch;
    checkpoint.val_macro_f1 = outcome.val_macro_f1;

    let mut model = trainer.model;
    model.head = HeadModel::from_snapshot(&checkpoint.head)?;
    if model.encoder.num_params() > 0 {
        model.encoder.set_params(&checkpoint.encoder_params)?;
    }
    Ok(TrainOutcome { checkpoint, model, history: outcome.history, stopped_early: outcome.stopped_early })
}

/// Trains on a dataset split projected onto `task`.
pub fn train(
    encoder: Box<dyn PooledEncoder>,
    split: &DatasetSplit,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let train_view = subtask_view(&split.train, task)?;
    let val_view = subtask_view(&split.val, task)?;
    train_examples(encoder, train_view, val_view, task, config)
}
