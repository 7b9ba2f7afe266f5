mod common;

use std::time::Instant;

use hiersex::corpus::{split_train_val, TaskId, Taxonomy};
use hiersex::encoders::{EncoderRegistry, PooledEncoder, TinyTestEncoder};
use hiersex::train::{train, Checkpoint, TrainConfig, TrainedModel, TrainError};

fn smoke_config() -> TrainConfig {
    TrainConfig { learning_rate: Some(1e-3), seed: 3, ..TrainConfig::default() }
}

#[test]
fn tiny_encoder_learns_hash_separable_data() {
    let task = Taxonomy::builtin().task(TaskId::A).unwrap();
    let split = split_train_val(&common::synthetic_samples(60, 11), 0.8, 42).unwrap();
    let start = Instant::now();
    let out = train(Box::new(TinyTestEncoder::new(16, 7)), &split, &task, &smoke_config()).unwrap();
    let best = out.checkpoint.val_macro_f1.unwrap();
    eprintln!("best val F1 {best} at epoch {} of {} in {:?}", out.checkpoint.epoch, out.history.len(), start.elapsed());
    assert!(best >= 0.9);
    assert!(out.history.len() <= 200);
    let argmax = out
        .history
        .iter()
        .fold(None, |b: Option<(usize, f64)>, r| match b {
            Some((_, f)) if r.val_macro_f1.unwrap() <= f => b,
            _ => Some((r.epoch, r.val_macro_f1.unwrap())),
        })
        .unwrap();
    assert_eq!(argmax.0, out.checkpoint.epoch);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let task = Taxonomy::builtin().task(TaskId::A).unwrap();
    let split = split_train_val(&common::synthetic_samples(40, 5), 0.8, 42).unwrap();
    let config = TrainConfig { max_epochs: 5, patience: 2, ..smoke_config() };
    let out = train(Box::new(TinyTestEncoder::new(8, 1)), &split, &task, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let model = TrainedModel::from_checkpoint(&back, &EncoderRegistry::default(), &task).unwrap();

    let ids: Vec<String> = split.val.iter().map(|s| s.sample_id.clone()).collect();
    let texts: Vec<&str> = split.val.iter().map(|s| s.text.as_str()).collect();
    let a = out.model.predict("r", &ids, &texts).unwrap();
    let b = model.predict("r", &ids, &texts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, out.model.predict("r", &ids, &texts).unwrap());
    assert!(model.predict("r", &[], &[]).unwrap().is_empty());

    let task_b = Taxonomy::builtin().task(TaskId::B).unwrap();
    assert!(matches!(
        TrainedModel::from_checkpoint(&back, &EncoderRegistry::default(), &task_b),
        Err(TrainError::TaskMismatch { .. })
    ));
}

#[test]
fn training_preconditions() {
    let task = Taxonomy::builtin().task(TaskId::B).unwrap();
    let split = split_train_val(&common::synthetic_samples(20, 1), 0.8, 42).unwrap();
    // synthetic rows carry no category labels, so the task-B view is empty
    let err = train(Box::new(TinyTestEncoder::new(4, 0)), &split, &task, &smoke_config()).unwrap_err();
    assert!(matches!(err, TrainError::EmptyView(_)), "{err}");

    let task_a = Taxonomy::builtin().task(TaskId::A).unwrap();
    let mut one_class = split.clone();
    one_class.train.retain(|s| s.label_a.unwrap().index() == 0);
    let err = train(Box::new(TinyTestEncoder::new(4, 0)), &one_class, &task_a, &smoke_config()).unwrap_err();
    assert!(matches!(err, TrainError::MissingClass(c) if c == "sexist"));
}

#[test]
fn frozen_encoder_is_untouched() {
    let task = Taxonomy::builtin().task(TaskId::A).unwrap();
    let split = split_train_val(&common::synthetic_samples(30, 2), 0.8, 42).unwrap();
    let mut encoder = TinyTestEncoder::new(8, 4);
    encoder.set_trainable(false).unwrap();
    let before = encoder.params();
    let config = TrainConfig { max_epochs: 3, patience: 2, ..smoke_config() };
    let out = train(Box::new(encoder), &split, &task, &config).unwrap();
    assert_eq!(out.model.encoder.params(), before);
}
