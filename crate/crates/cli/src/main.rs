//! `hiersex` command line: cleaning, augmentation, baseline, training,
//! prediction, blending, scoring, threshold sweeps and roster runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};
use hiersex::corpus::TaskId;
use hiersex::pipeline::Roster;

use config::{AugmentMethod, AugmentSettings, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hiersex", version, about = "Hierarchical sexism classification toolkit")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "HIERSEX_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for the split, training and augmentation.
    #[arg(long, global = true, env = "HIERSEX_SEED")]
    seed: Option<u64>,
    /// Taxonomy JSON with class names for tasks A, B and C.
    #[arg(long, global = true, env = "HIERSEX_TAXONOMY")]
    taxonomy: Option<PathBuf>,
    /// Slang dictionary (`ABBR=expansion` lines) used when cleaning.
    #[arg(long, global = true, env = "HIERSEX_SLANG")]
    slang: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean the text column of a corpus CSV.
    Clean {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Balance a task's classes with generated samples.
    Augment(AugmentArgs),
    /// Word-vector mean + logistic regression baseline (task A).
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Train an encoder + head and write a run directory.
    Train(TrainArgs),
    /// Predict with a trained run.
    Predict(PredictArgs),
    /// Weighted average of probability files.
    Blend(BlendArgs),
    /// Macro F1 of prediction files against a gold corpus.
    Score(ScoreArgs),
    /// Task-A macro F1 over a grid of thresholds.
    Sweep(SweepArgs),
    /// Run a model roster on one split and print a results table.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(short, long)]
    task: Option<TaskId>,
    #[arg(long, value_enum, default_value = "eda")]
    method: AugmentMethod,
    /// Per-word edit rate for EDA.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    thesaurus: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Recorded translations (JSON array) for back translation.
    #[arg(long)]
    translations: Option<PathBuf>,
    #[arg(long)]
    pivot: Option<String>,
    /// Leave generated text uncleaned.
    #[arg(long)]
    no_clean: bool,
}

#[derive(Subcommand, Debug)]
enum BaselineCommand {
    /// Fit on the training split and score the validation split.
    Train {
        #[arg(long, env = "HIERSEX_DATA")]
        data: Option<PathBuf>,
        #[arg(long, env = "HIERSEX_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_clean: bool,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, env = "HIERSEX_VECTORS")]
        vectors: Option<PathBuf>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        probs: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, env = "HIERSEX_DATA")]
    data: Option<PathBuf>,
    #[arg(short, long)]
    task: Option<TaskId>,
    /// Encoder spec; give twice for a concatenation ensemble.
    #[arg(long = "encoder")]
    encoders: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Train on every sample and keep the last epoch.
    #[arg(long)]
    train_on_all: bool,
    #[arg(long)]
    no_clean: bool,
    /// Balance the training split before training.
    #[arg(long, value_enum)]
    augment: Option<AugmentMethod>,
    #[arg(long, env = "HIERSEX_RUNS", default_value = "runs")]
    out: PathBuf,
    #[arg(long, env = "HIERSEX_CHECKPOINTS")]
    checkpoint_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, env = "HIERSEX_CHECKPOINTS")]
    checkpoint_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BlendArgs {
    #[arg(short, long)]
    task: Option<TaskId>,
    /// Comma-separated weights summing to 1; defaults to 0.6,0.4 for two files.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Probability files, in weight order.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(short, long)]
    task: Option<TaskId>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(required = true)]
    predictions: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated thresholds; defaults to 0.05..0.95 in steps of 0.05.
    #[arg(long)]
    grid: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    probs: PathBuf,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// task-a, task-b, task-c or uncleaned-ablation.
    #[arg(long, conflicts_with = "encoders")]
    preset: Option<String>,
    /// Single-model roster instead of a preset.
    #[arg(long = "encoder")]
    encoders: Vec<String>,
    #[arg(short, long)]
    task: Option<TaskId>,
    #[arg(long, env = "HIERSEX_DATA")]
    data: Option<PathBuf>,
    #[arg(long, env = "HIERSEX_CHECKPOINTS")]
    checkpoint_root: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    if cli.taxonomy.is_some() {
        config.paths.taxonomy = cli.taxonomy.clone();
    }
    if cli.slang.is_some() {
        config.paths.slang = cli.slang.clone();
    }
    Ok(config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = base_config(&cli)?;
    match cli.command {
        Command::Clean { input, output } => commands::clean(&config, &input, &output),
        Command::Augment(a) => {
            set(&mut config.task, a.task);
            let mut settings = config.augment.clone().unwrap_or_default();
            settings.method = a.method;
            set(&mut settings.rate, a.rate);
            set(&mut settings.pivot, a.pivot);
            config.augment = Some(settings);
            set(&mut config.paths.thesaurus, a.thesaurus.map(Some));
            set(&mut config.paths.stopwords, a.stopwords.map(Some));
            set(&mut config.paths.translations, a.translations.map(Some));
            if a.no_clean {
                config.clean = false;
            }
            commands::augment(&config, &a.input, &a.output)
        }
        Command::Baseline(BaselineCommand::Train { data, vectors, out, no_clean }) => {
            set(&mut config.paths.dataset, data.map(Some));
            set(&mut config.paths.vectors, vectors.map(Some));
            if no_clean {
                config.clean = false;
            }
            commands::baseline_train(&config, &out).map(|_| ())
        }
        Command::Baseline(BaselineCommand::Predict { model, vectors, input, output, probs }) => {
            set(&mut config.paths.vectors, vectors.map(Some));
            commands::baseline_predict(&config, &model, &input, &output, probs.as_deref())
        }
        Command::Train(t) => {
            set(&mut config.paths.dataset, t.data.map(Some));
            set(&mut config.task, t.task);
            if !t.encoders.is_empty() {
                config.encoders = t.encoders;
            }
            set(&mut config.train.max_epochs, t.epochs);
            set(&mut config.train.patience, t.patience);
            set(&mut config.train.learning_rate, t.lr.map(Some));
            set(&mut config.train.batch_size, t.batch_size);
            set(&mut config.train.hidden_dim, t.hidden_dim);
            set(&mut config.train.dropout, t.dropout);
            set(&mut config.threshold, t.threshold);
            set(&mut config.train_fraction, t.train_fraction);
            config.train.train_on_all |= t.train_on_all;
            if t.no_clean {
                config.clean = false;
            }
            if let Some(method) = t.augment {
                let mut settings = config.augment.clone().unwrap_or_else(AugmentSettings::default);
                settings.method = method;
                config.augment = Some(settings);
            }
            set(&mut config.paths.checkpoint_root, t.checkpoint_root.map(Some));
            let out = config.paths.output_dir.clone().filter(|_| t.out.as_os_str() == "runs").unwrap_or(t.out);
            commands::train(&config, &out).map(|_| ())
        }
        Command::Predict(p) => commands::predict(
            &p.run,
            &p.input,
            &p.output,
            p.probs.as_deref(),
            p.threshold,
            p.checkpoint_root,
        ),
        Command::Blend(b) => {
            set(&mut config.task, b.task);
            set(&mut config.threshold, b.threshold);
            commands::blend_files(&config, &b.files, b.weights.as_deref(), &b.output, b.probs.as_deref())
        }
        Command::Score(s) => {
            set(&mut config.task, s.task);
            commands::score(&config, &s.gold, &s.predictions)
        }
        Command::Sweep(s) => commands::sweep(&config, &s.gold, &s.probs, s.grid.as_deref(), s.output.as_deref()),
        Command::Reproduce(r) => {
            set(&mut config.paths.dataset, r.data.map(Some));
            set(&mut config.paths.checkpoint_root, r.checkpoint_root.map(Some));
            set(&mut config.train.max_epochs, r.epochs);
            set(&mut config.train.patience, r.patience);
            set(&mut config.train.learning_rate, r.lr.map(Some));
            set(&mut config.task, r.task);
            let roster = if r.encoders.is_empty() {
                Roster::preset(r.preset.as_deref().unwrap_or("task-b"))?
            } else {
                Roster::single(config.task, &r.encoders.join("+"), r.encoders, config.clean)
            };
            commands::reproduce(&config, &roster, r.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("HIERSEX_LOG").init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
