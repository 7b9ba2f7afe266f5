use std::collections::HashMap;
use std::convert::Infallible;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hiersex::augment::{
    back_translate, balance_classes, load_stopwords, shipped_stopwords, BalancedExample, Eda, EdaConfig,
    IdentityTranslator, RecordedTranslator, Thesaurus, TranslateError, Translator, TranslatorAdapter,
};
use hiersex::baseline::{featurize, fit_baseline, load_vectors, predict_logistic, LogisticConfig, LogisticModel, BASELINE_THRESHOLD};
use hiersex::corpus::{
    binary_counts, load_dataset, split_train_val, subtask_view, write_dataset, LabeledSample, TaskExample, TaskId,
    TaskSpec, Taxonomy,
};
use hiersex::eval::{
    blend, default_grid, load_predictions, load_probabilities, save_predictions, save_probabilities,
    score_predictions, threshold_sweep, BlendSpec, GoldLabels, RunMetadata, RunRecord,
};
use hiersex::pipeline::{run_roster, PipelineConfig, Roster};
use hiersex::textclean::{clean_samples, clean_text, CleaningConfig};
use hiersex::train::{history_csv, train_examples, Checkpoint, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::config::{create_run_dir, AugmentMethod, AugmentSettings, RunConfig, RunManifest};

pub fn load_samples(path: &Path, config: &RunConfig, taxonomy: &Taxonomy) -> Result<Vec<LabeledSample>> {
    let samples = load_dataset(path, &config.columns, taxonomy).with_context(|| format!("loading {}", path.display()))?;
    log::info!("loaded {} samples from {}", samples.len(), path.display());
    Ok(samples)
}

fn maybe_clean(samples: Vec<LabeledSample>, cleaning: Option<&CleaningConfig>) -> Vec<LabeledSample> {
    match cleaning {
        Some(c) => {
            let (cleaned, report) = clean_samples(samples, c);
            log::info!(
                "cleaning: {} urls removed, {} slang expansions, {} chars dropped",
                report.urls_removed,
                report.slang_expanded,
                report.chars_dropped
            );
            cleaned
        }
        None => samples,
    }
}

fn gold_labels(samples: &[LabeledSample], task: &TaskSpec) -> Result<GoldLabels> {
    Ok(subtask_view(samples, task)?.into_iter().map(|e| (e.sample_id, e.class)).collect())
}

pub fn clean(config: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let taxonomy = config.taxonomy()?;
    let samples = load_samples(input, config, &taxonomy)?;
    let (cleaned, report) = clean_samples(samples, &config.cleaning()?);
    write_dataset(output, &cleaned, &config.columns, &taxonomy)?;
    eprintln!(
        "cleaned {} posts: {} urls removed, {} slang expansions, {} characters dropped",
        cleaned.len(),
        report.urls_removed,
        report.slang_expanded,
        report.chars_dropped
    );
    Ok(())
}

enum Backend {
    Identity(IdentityTranslator),
    Recorded(RecordedTranslator),
}

impl Translator for Backend {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        match self {
            Backend::Identity(t) => t.translate(text, source, target),
            Backend::Recorded(t) => t.translate(text, source, target),
        }
    }
}

/// Balances `train` to the majority class with the configured generator.
/// Generated text is cleaned when `cleaning` is given.
fn balance(
    train: &[TaskExample],
    task: &TaskSpec,
    settings: &AugmentSettings,
    config: &RunConfig,
    cleaning: Option<&CleaningConfig>,
) -> Result<Vec<BalancedExample>> {
    let finish = |text: String| match cleaning {
        Some(c) => clean_text(&text, c).0,
        None => text,
    };
    let (rows, report) = match settings.method {
        AugmentMethod::Eda => {
            let thesaurus = match &config.paths.thesaurus {
                Some(p) => Thesaurus::load(p)?,
                None => Thesaurus::shipped(),
            };
            let stopwords = match &config.paths.stopwords {
                Some(p) => load_stopwords(p)?,
                None => shipped_stopwords(),
            };
            let mut eda_config = EdaConfig::shipped(config.seed);
            eda_config.rate = settings.rate;
            eda_config.thesaurus = thesaurus;
            eda_config.stopwords = stopwords;
            let mut eda = Eda::new(eda_config)?;
            balance_classes(train, task.arity(), |t| Ok::<_, Infallible>(finish(eda.augment(t))), config.seed)?
        }
        AugmentMethod::Backtranslate => {
            let backend = match &config.paths.translations {
                Some(p) => Backend::Recorded(RecordedTranslator::load(p)?),
                None => {
                    log::warn!("no translation fixture given; back translation uses the identity translator");
                    Backend::Identity(IdentityTranslator)
                }
            };
            let adapter = TranslatorAdapter::new(backend).with_pivot(settings.pivot.clone());
            balance_classes(train, task.arity(), |t| back_translate(t, &adapter).map(finish), config.seed)?
        }
    };
    for (origin, message) in &report.failures {
        log::warn!("augmenting from {origin} failed: {message}");
    }
    log::info!("augmentation added {} rows ({} unchanged)", report.augmented, report.unchanged);
    Ok(rows)
}

pub fn augment(config: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let settings = config.augment.clone().unwrap_or_default();
    let taxonomy = config.taxonomy()?;
    let task = config.task_spec(&taxonomy)?;
    let cleaning = if config.clean { Some(config.cleaning()?) } else { None };
    let samples = load_samples(input, config, &taxonomy)?;
    let view = subtask_view(&samples, &task)?;
    ensure!(!view.is_empty(), "no samples carry a task {} label", task.task_id);

    let by_id: HashMap<&str, &LabeledSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let balanced = balance(&view, &task, &settings, config, cleaning.as_ref())?;
    let mut out = samples.clone();
    for row in balanced.into_iter().filter(|r| r.origin.is_some()) {
        let origin = by_id[row.origin.as_deref().unwrap_or_default()];
        out.push(LabeledSample { sample_id: row.sample_id, text: row.text, ..origin.clone() });
    }
    let added = out.len() - samples.len();
    write_dataset(output, &out, &config.columns, &taxonomy)?;
    eprintln!("wrote {} rows ({added} generated) to {}", out.len(), output.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineArtifact {
    model: LogisticModel,
    threshold: f64,
    clean: bool,
}

fn baseline_task(taxonomy: &Taxonomy, threshold: f64) -> Result<TaskSpec> {
    Ok(taxonomy.task(TaskId::A)?.with_threshold(threshold))
}

pub fn baseline_train(config: &RunConfig, out: &Path) -> Result<f64> {
    let taxonomy = config.taxonomy()?;
    let task = baseline_task(&taxonomy, BASELINE_THRESHOLD)?;
    let vectors_path = config.paths.vectors.as_deref().context("no word vectors given (use --vectors)")?;
    let table = load_vectors(vectors_path)?;
    let cleaning = if config.clean { Some(config.cleaning()?) } else { None };
    let samples = maybe_clean(load_samples(config.dataset()?, config, &taxonomy)?, cleaning.as_ref());
    let split = split_train_val(&samples, config.train_fraction, config.seed)?;
    let train = subtask_view(&split.train, &task)?;
    let val = subtask_view(&split.val, &task)?;
    ensure!(!val.is_empty(), "the validation split has no task A labels");

    let model = fit_baseline(&train, &table, &LogisticConfig::default())?;
    if !model.converged {
        log::warn!("logistic regression stopped after {} iterations without converging", model.iterations);
    }
    let (x, _) = featurize(val.iter().map(|e| e.text.as_str()), &table);
    let probs = predict_logistic(&model, &x)?.into_iter().map(|p| vec![p]).collect();
    let ids = val.iter().map(|e| e.sample_id.clone()).collect();
    let record = RunRecord::new("baseline", &task, ids, probs, RunMetadata::default())?;
    let gold: Vec<usize> = val.iter().map(|e| e.class).collect();
    let f1 = hiersex::eval::macro_f1(&gold, &record.decisions, 2)?;

    std::fs::create_dir_all(out)?;
    let artifact = BaselineArtifact { model, threshold: BASELINE_THRESHOLD, clean: config.clean };
    std::fs::write(out.join("model.json"), serde_json::to_vec_pretty(&artifact)?)?;
    save_predictions(&out.join("val_predictions.csv"), &record, &task)?;
    save_probabilities(&out.join("val_probs.csv"), &record)?;
    println!("validation macro F1 {f1:.4}");
    Ok(f1)
}

pub fn baseline_predict(config: &RunConfig, model_path: &Path, input: &Path, output: &Path, probs: Option<&Path>) -> Result<()> {
    let artifact: BaselineArtifact = serde_json::from_slice(
        &std::fs::read(model_path).with_context(|| format!("reading {}", model_path.display()))?,
    )
    .with_context(|| format!("parsing {}", model_path.display()))?;
    let taxonomy = config.taxonomy()?;
    let task = baseline_task(&taxonomy, artifact.threshold)?;
    let table = load_vectors(config.paths.vectors.as_deref().context("no word vectors given (use --vectors)")?)?;
    let cleaning = if artifact.clean { Some(config.cleaning()?) } else { None };
    let samples = maybe_clean(load_samples(input, config, &taxonomy)?, cleaning.as_ref());
    let (x, oov) = featurize(samples.iter().map(|s| s.text.as_str()), &table);
    if oov > 0 {
        log::info!("{oov} posts have no in-vocabulary token");
    }
    let p = predict_logistic(&artifact.model, &x)?.into_iter().map(|p| vec![p]).collect();
    let ids = samples.iter().map(|s| s.sample_id.clone()).collect();
    let record = RunRecord::new("baseline", &task, ids, p, RunMetadata::default())?;
    write_outputs(&record, &task, output, probs)
}

fn default_probs_path(output: &Path) -> PathBuf {
    output.with_extension("probs.csv")
}

fn write_outputs(record: &RunRecord, task: &TaskSpec, output: &Path, probs: Option<&Path>) -> Result<()> {
    save_predictions(output, record, task)?;
    let probs = probs.map(Path::to_owned).unwrap_or_else(|| default_probs_path(output));
    save_probabilities(&probs, record)?;
    eprintln!("wrote {} predictions to {} (probabilities in {})", record.len(), output.display(), probs.display());
    Ok(())
}

/// Trains one model and writes the run directory; returns its path.
pub fn train(config: &RunConfig, runs_root: &Path) -> Result<PathBuf> {
    ensure!(!config.encoders.is_empty(), "no encoder given (use --encoder)");
    let taxonomy = config.taxonomy()?;
    let task = config.task_spec(&taxonomy)?;
    let cleaning = if config.clean { Some(config.cleaning()?) } else { None };
    let samples = maybe_clean(load_samples(config.dataset()?, config, &taxonomy)?, cleaning.as_ref());
    let encoder = config.registry().resolve(&config.encoders)?;
    let encoder_specs = encoder.specs();
    let learning_rate = config.train.effective_learning_rate(encoder.trainable());

    let (train_view, val_view) = if config.train.train_on_all {
        (subtask_view(&samples, &task)?, Vec::new())
    } else {
        let split = split_train_val(&samples, config.train_fraction, config.seed)?;
        (subtask_view(&split.train, &task)?, subtask_view(&split.val, &task)?)
    };
    let train_view = match &config.augment {
        Some(settings) if !train_view.is_empty() => balance(&train_view, &task, settings, config, cleaning.as_ref())?
            .into_iter()
            .map(|r| TaskExample { sample_id: r.sample_id, text: r.text, class: r.class })
            .collect(),
        _ => train_view,
    };

    let outcome = train_examples(encoder, train_view, val_view.clone(), &task, &config.train)?;
    let dir = create_run_dir(runs_root, config)?;
    let manifest = RunManifest { config: config.clone(), taxonomy, encoder_specs, learning_rate };
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(dir.join("history.csv"), history_csv(&outcome.history))?;
    outcome.checkpoint.save(&dir.join("checkpoint"))?;

    if !val_view.is_empty() {
        let ids: Vec<String> = val_view.iter().map(|e| e.sample_id.clone()).collect();
        let texts: Vec<&str> = val_view.iter().map(|e| e.text.as_str()).collect();
        let record = outcome.model.predict("val", &ids, &texts)?;
        save_predictions(&dir.join("val_predictions.csv"), &record, &task)?;
        save_probabilities(&dir.join("val_probs.csv"), &record)?;
    }
    match outcome.checkpoint.val_macro_f1 {
        Some(f1) => eprintln!(
            "best validation macro F1 {f1:.4} at epoch {} of {}",
            outcome.checkpoint.epoch,
            outcome.history.len()
        ),
        None => eprintln!("trained {} epochs on all data", outcome.history.len()),
    }
    println!("{}", dir.display());
    Ok(dir)
}

pub fn read_manifest(run: &Path) -> Result<RunManifest> {
    let path = run.join("config.json");
    serde_json::from_slice(&std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn predict(
    run: &Path,
    input: &Path,
    output: &Path,
    probs: Option<&Path>,
    threshold: Option<f64>,
    checkpoint_root: Option<PathBuf>,
) -> Result<()> {
    let mut manifest = read_manifest(run)?;
    if let Some(t) = threshold {
        manifest.config.threshold = t;
    }
    if checkpoint_root.is_some() {
        manifest.config.paths.checkpoint_root = checkpoint_root;
    }
    let config = &manifest.config;
    let task = config.task_spec(&manifest.taxonomy)?;
    let checkpoint = Checkpoint::load(&run.join("checkpoint"))?;
    let model = TrainedModel::from_checkpoint(&checkpoint, &config.registry(), &task)?;

    let cleaning = if config.clean { Some(config.cleaning()?) } else { None };
    let samples = maybe_clean(load_samples(input, config, &manifest.taxonomy)?, cleaning.as_ref());
    let ids: Vec<String> = samples.iter().map(|s| s.sample_id.clone()).collect();
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let run_id = run.file_name().and_then(|s| s.to_str()).unwrap_or("run");
    let record = model.predict(run_id, &ids, &texts)?;
    write_outputs(&record, &task, output, probs)
}

pub fn parse_weights(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|w| w.trim().parse::<f64>().with_context(|| format!("bad weight `{w}`")))
        .collect()
}

pub fn blend_files(
    config: &RunConfig,
    files: &[PathBuf],
    weights: Option<&str>,
    output: &Path,
    probs: Option<&Path>,
) -> Result<()> {
    ensure!(files.len() >= 2, "a blend needs at least two probability files, got {}", files.len());
    let weights = match weights {
        Some(w) => parse_weights(w)?,
        None if files.len() == 2 => hiersex::eval::DEFAULT_BLEND_WEIGHTS.to_vec(),
        None => bail!("--weights is required for more than two members"),
    };
    ensure!(weights.len() == files.len(), "{} weights for {} files", weights.len(), files.len());

    let task = config.task_spec(&config.taxonomy()?)?;
    let mut records = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let mut record = load_probabilities(path, &task).with_context(|| format!("reading {}", path.display()))?;
        record.run_id = format!("{i}:{}", path.display());
        records.push(record);
    }
    let spec = BlendSpec::new(records.iter().map(|r| r.run_id.clone()).zip(weights).collect())?;
    let blended = blend(&records, &spec, &task)?;
    write_outputs(&blended, &task, output, probs)
}

pub fn score(config: &RunConfig, gold_path: &Path, predictions: &[PathBuf]) -> Result<()> {
    let taxonomy = config.taxonomy()?;
    let task = config.task_spec(&taxonomy)?;
    let gold = gold_labels(&load_samples(gold_path, config, &taxonomy)?, &task)?;
    let mut stdout = std::io::stdout().lock();
    for path in predictions {
        let preds = load_predictions(path, &task).with_context(|| format!("reading {}", path.display()))?;
        let (macro_value, per_class) = score_predictions(&preds, &gold, &task)?;
        if predictions.len() > 1 {
            writeln!(stdout, "{}", path.display())?;
        }
        writeln!(stdout, "macro F1 {macro_value:.4}")?;
        for (name, f1) in task.class_names.iter().zip(&per_class) {
            writeln!(stdout, "  {name}: {f1:.4}")?;
        }
    }
    Ok(())
}

pub fn sweep(config: &RunConfig, gold_path: &Path, probs: &Path, grid: Option<&str>, output: Option<&Path>) -> Result<()> {
    let taxonomy = config.taxonomy()?;
    let task = taxonomy.task(TaskId::A)?.with_threshold(config.threshold);
    let gold = gold_labels(&load_samples(gold_path, config, &taxonomy)?, &task)?;
    let record = load_probabilities(probs, &task)?;
    let gold_classes = record
        .sample_ids
        .iter()
        .map(|id| gold.get(id).copied().with_context(|| format!("no gold label for `{id}`")))
        .collect::<Result<Vec<_>>>()?;
    let grid = match grid {
        Some(g) => parse_weights(g)?,
        None => default_grid(),
    };
    let result = threshold_sweep(&record, &gold_classes, &grid)?;
    match output {
        Some(path) => std::fs::write(path, result.to_csv())?,
        None => print!("{}", result.to_csv()),
    }
    eprintln!("best threshold {:.2} (macro F1 {:.4})", result.best_threshold, result.best_f1);
    Ok(())
}

pub fn reproduce(config: &RunConfig, roster: &Roster, out: Option<&Path>) -> Result<()> {
    let mut config = config.clone();
    config.task = roster.task;
    let taxonomy = config.taxonomy()?;
    let task = config.task_spec(&taxonomy)?;
    let samples = load_samples(config.dataset()?, &config, &taxonomy)?;
    let counts = binary_counts(&samples);
    log::info!("class counts: {counts:?}");
    let pipeline = PipelineConfig {
        train: config.train.clone(),
        train_fraction: config.train_fraction,
        split_seed: config.seed,
        cleaning: config.cleaning()?,
    };
    let outcome = run_roster(&samples, roster, &task, &config.registry(), &pipeline)?;
    print!("{}", outcome.report.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), outcome.report.to_csv())?;
        for (i, record) in outcome.records.iter().enumerate() {
            save_probabilities(&dir.join(format!("{i:02}_probs.csv")), record)?;
        }
    }
    if outcome.report.skipped() > 0 {
        eprintln!("{} roster entries skipped", outcome.report.skipped());
    }
    Ok(())
}
