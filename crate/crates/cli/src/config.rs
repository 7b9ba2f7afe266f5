use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use hiersex::corpus::{ColumnMap, TaskId, TaskSpec, Taxonomy, DEFAULT_SPLIT_SEED, DEFAULT_THRESHOLD};
use hiersex::encoders::EncoderRegistry;
use hiersex::pipeline::DEFAULT_TRAIN_FRACTION;
use hiersex::textclean::{load_slang_map, CleaningConfig};
use hiersex::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMethod {
    Eda,
    Backtranslate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSettings {
    pub method: AugmentMethod,
    pub rate: f64,
    pub pivot: String,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            method: AugmentMethod::Eda,
            rate: hiersex::augment::DEFAULT_EDA_RATE,
            pivot: hiersex::augment::DEFAULT_PIVOT_LANGUAGE.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub slang: Option<PathBuf>,
    pub thesaurus: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub translations: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub checkpoint_root: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Everything a run needs. Read from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: TaskId,
    pub encoders: Vec<String>,
    pub train: TrainConfig,
    pub clean: bool,
    pub augment: Option<AugmentSettings>,
    pub threshold: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub columns: ColumnMap,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskId::A,
            encoders: Vec::new(),
            train: TrainConfig::default(),
            clean: true,
            augment: None,
            threshold: DEFAULT_THRESHOLD,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: DEFAULT_SPLIT_SEED,
            columns: ColumnMap::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        match &self.paths.taxonomy {
            Some(path) => Ok(Taxonomy::load(path)?),
            None => Ok(Taxonomy::builtin()),
        }
    }

    pub fn task_spec(&self, taxonomy: &Taxonomy) -> Result<TaskSpec> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            bail!("threshold must lie in (0, 1), got {}", self.threshold);
        }
        Ok(taxonomy.task(self.task)?.with_threshold(self.threshold))
    }

    pub fn cleaning(&self) -> Result<CleaningConfig> {
        match &self.paths.slang {
            Some(path) => Ok(CleaningConfig::with_slang(load_slang_map(path)?)),
            None => Ok(CleaningConfig::shipped()),
        }
    }

    pub fn registry(&self) -> EncoderRegistry {
        EncoderRegistry::new(self.paths.checkpoint_root.clone())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.paths.dataset.as_deref().context("no dataset given (use --data or HIERSEX_DATA)")
    }
}

/// Written to every run directory; enough to re-run or reload the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    pub encoder_specs: Vec<String>,
    pub learning_rate: f64,
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json))[..12].to_owned())
}

/// Creates `<root>/<config hash>-<unix seconds>`, adding a counter if a run
/// with the same config already started this second.
pub fn create_run_dir(root: &Path, config: &RunConfig) -> Result<PathBuf> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = format!("{}-{stamp}", config_hash(config)?);
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}.{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}
