//! Class-balancing augmentation.
//!
//! Easy Data Augmentation (synonym replacement, random insertion, random
//! swap) generates one altered sentence per call, cycling through the
//! configured operations. Back translation round-trips text through a pivot
//! language using a pluggable [`Translator`]. [`balance_classes`] tops every
//! minority class up to the majority count with either generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TaskExample;

pub const DEFAULT_EDA_RATE: f64 = 0.05;
pub const DEFAULT_PIVOT_LANGUAGE: &str = "nl";
pub const SOURCE_LANGUAGE: &str = "en";

const SHIPPED_THESAURUS: &str = include_str!("../data/thesaurus.txt");
const SHIPPED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {reason}")]
    Malformed { file: &'static str, line: usize, reason: String },
    #[error("invalid EDA config: {0}")]
    Config(String),
    #[error("class {0} has no samples to augment from")]
    EmptyClass(usize),
    #[error("class {class}: every origin sample failed to augment ({failures} failures)")]
    ClassExhausted { class: usize, failures: usize },
}

/// Word to synonyms lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Thesaurus(HashMap<String, Vec<String>>);

impl Thesaurus {
    pub fn new(entries: HashMap<String, Vec<String>>) -> Result<Self, AugmentError> {
        if let Some((word, _)) = entries.iter().find(|(_, syns)| syns.is_empty()) {
            return Err(AugmentError::Config(format!("thesaurus entry `{word}` has no synonyms")));
        }
        Ok(Thesaurus(entries))
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_THESAURUS.as_bytes()).expect("shipped thesaurus parses")
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let file = std::fs::File::open(path)
            .map_err(|source| AugmentError::Io { path: path.to_owned(), source })?;
        Self::parse(std::io::BufReader::new(file))
    }

    /// Parses `word: syn1, syn2, ...` lines; blank and `#` lines are skipped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, AugmentError> {
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| AugmentError::Io { path: "<thesaurus>".into(), source })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed =
                |reason: &str| AugmentError::Malformed { file: "thesaurus", line: i + 1, reason: reason.into() };
            let (word, syns) = line.split_once(':').ok_or_else(|| malformed("expected `word: syn, ...`"))?;
            let word = word.trim().to_lowercase();
            let syns: Vec<String> =
                syns.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
            if word.is_empty() || syns.is_empty() {
                return Err(malformed("empty word or synonym list"));
            }
            entries.insert(word, syns);
        }
        Ok(Thesaurus(entries))
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.0.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn shipped_stopwords() -> HashSet<String> {
    SHIPPED_STOPWORDS.split_whitespace().map(str::to_owned).collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, AugmentError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| AugmentError::Io { path: path.to_owned(), source })?;
    Ok(text.split_whitespace().map(str::to_lowercase).collect())
}

/// Replaces up to `n` distinct eligible positions (non-stopword with a
/// thesaurus entry) by a uniformly chosen synonym.
pub fn synonym_replacement<R: Rng + ?Sized>(
    words: &[String],
    n: usize,
    thesaurus: &Thesaurus,
    stopwords: &HashSet<String>,
    rng: &mut R,
) -> Vec<String> {
    let mut out = words.to_vec();
    let mut eligible: Vec<usize> = (0..words.len())
        .filter(|&i| !stopwords.contains(&words[i]) && thesaurus.contains(&words[i]))
        .collect();
    eligible.shuffle(rng);
    for &i in eligible.iter().take(n) {
        let syns = thesaurus.synonyms(&words[i]).expect("eligible words have entries");
        out[i] = syns.choose(rng).expect("non-empty synonym list").clone();
    }
    out
}

/// `n` times: pick a thesaurus-covered word, insert one of its synonyms at a
/// random position.
pub fn random_insertion<R: Rng + ?Sized>(
    words: &[String],
    n: usize,
    thesaurus: &Thesaurus,
    rng: &mut R,
) -> Vec<String> {
    let mut out = words.to_vec();
    for _ in 0..n {
        let covered: Vec<&String> = out.iter().filter(|w| thesaurus.contains(w)).collect();
        let Some(word) = covered.choose(rng) else { break };
        let synonym = thesaurus.synonyms(word).and_then(|s| s.choose(rng)).cloned().expect("covered");
        let at = rng.gen_range(0..=out.len());
        out.insert(at, synonym);
    }
    out
}

/// `n` uniformly random index-pair swaps; a pair may be the same index.
pub fn random_swap<R: Rng + ?Sized>(words: &[String], n: usize, rng: &mut R) -> Vec<String> {
    let mut out = words.to_vec();
    if out.len() < 2 {
        return out;
    }
    for _ in 0..n {
        let i = rng.gen_range(0..out.len());
        let j = rng.gen_range(0..out.len());
        out.swap(i, j);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdaOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
}

impl fmt::Display for EdaOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdaOp::SynonymReplacement => "sr",
            EdaOp::RandomInsertion => "ri",
            EdaOp::RandomSwap => "rs",
        })
    }
}

impl FromStr for EdaOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sr" | "synonym_replacement" => Ok(EdaOp::SynonymReplacement),
            "ri" | "random_insertion" => Ok(EdaOp::RandomInsertion),
            "rs" | "random_swap" => Ok(EdaOp::RandomSwap),
            other => Err(format!("unknown EDA operation `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdaConfig {
    pub rate: f64,
    pub operations: Vec<EdaOp>,
    pub thesaurus: Thesaurus,
    pub stopwords: HashSet<String>,
    pub seed: u64,
}

impl EdaConfig {
    /// Rate 0.05, all three operations, shipped thesaurus and stopwords.
    pub fn shipped(seed: u64) -> Self {
        EdaConfig {
            rate: DEFAULT_EDA_RATE,
            operations: vec![EdaOp::SynonymReplacement, EdaOp::RandomInsertion, EdaOp::RandomSwap],
            thesaurus: Thesaurus::shipped(),
            stopwords: shipped_stopwords(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(AugmentError::Config(format!("rate must lie in (0, 1), got {}", self.rate)));
        }
        if self.operations.is_empty() {
            return Err(AugmentError::Config("no operations configured".into()));
        }
        Ok(())
    }

    /// Number of edits for a sentence: `max(1, round(rate * words))`.
    pub fn edits_for(&self, word_count: usize) -> usize {
        ((self.rate * word_count as f64).round() as usize).max(1)
    }
}

/// Round-robin EDA generator. Call `k` uses operation `k mod len(operations)`
/// and a random stream derived from `(seed, k)`, so its output depends only
/// on the input text, the seed and the cursor.
#[derive(Debug, Clone)]
pub struct Eda {
    config: EdaConfig,
    cursor: u64,
}

impl Eda {
    pub fn new(config: EdaConfig) -> Result<Self, AugmentError> {
        config.validate()?;
        Ok(Eda { config, cursor: 0 })
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn config(&self) -> &EdaConfig {
        &self.config
    }

    pub fn augment(&mut self, text: &str) -> String {
        let out = self.augment_at(text, self.cursor).0;
        self.cursor += 1;
        out
    }

    /// Stateless form of [`Eda::augment`]; also reports which operation ran.
    pub fn augment_at(&self, text: &str, cursor: u64) -> (String, EdaOp) {
        let ops = &self.config.operations;
        let op = ops[(cursor % ops.len() as u64) as usize];
        let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            log::warn!("EDA input has no tokens; returned unchanged");
            return (text.to_owned(), op);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(cursor);
        let n = self.config.edits_for(words.len());
        let out = match op {
            EdaOp::SynonymReplacement => {
                synonym_replacement(&words, n, &self.config.thesaurus, &self.config.stopwords, &mut rng)
            }
            EdaOp::RandomInsertion => random_insertion(&words, n, &self.config.thesaurus, &mut rng),
            EdaOp::RandomSwap => random_swap(&words, n, &mut rng),
        };
        (out.join(" "), op)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranslateError {
    #[error("translation backend failed: {0}")]
    Backend(String),
    #[error("translation timed out")]
    Timeout,
    #[error("no recorded translation for `{text}` ({source_lang}->{target_lang})")]
    NotRecorded { text: String, source_lang: String, target_lang: String },
}

impl TranslateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TranslateError::Backend(_) | TranslateError::Timeout)
    }
}

/// A single text-in, text-out machine translation call.
pub trait Translator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError>;
}

/// Returns its input untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String, TranslateError> {
        Ok(text.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedTranslation {
    pub source: String,
    pub target: String,
    pub text: String,
    pub translation: String,
}

/// Replays translations captured from a real backend, keyed by
/// `(source, target, text)`. Unknown inputs fail with `NotRecorded`.
#[derive(Debug, Clone, Default)]
pub struct RecordedTranslator {
    table: HashMap<(String, String, String), String>,
}

impl RecordedTranslator {
    pub fn new(records: impl IntoIterator<Item = RecordedTranslation>) -> Self {
        let table = records
            .into_iter()
            .map(|r| ((r.source, r.target, r.text), r.translation))
            .collect();
        RecordedTranslator { table }
    }

    /// Loads a JSON array of [`RecordedTranslation`].
    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| AugmentError::Io { path: path.to_owned(), source })?;
        let records: Vec<RecordedTranslation> = serde_json::from_str(&text)
            .map_err(|e| AugmentError::Malformed { file: "translation fixture", line: e.line(), reason: e.to_string() })?;
        Ok(Self::new(records))
    }
}

impl Translator for RecordedTranslator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, TranslateError> {
        self.table
            .get(&(source.to_owned(), target.to_owned(), text.to_owned()))
            .cloned()
            .ok_or_else(|| TranslateError::NotRecorded {
                text: text.to_owned(),
                source_lang: source.to_owned(),
                target_lang: target.to_owned(),
            })
    }
}

pub struct TranslatorAdapter<T> {
    pub pivot_language: String,
    pub backend: T,
}

impl<T: Translator> TranslatorAdapter<T> {
    pub fn new(backend: T) -> Self {
        TranslatorAdapter { pivot_language: DEFAULT_PIVOT_LANGUAGE.to_owned(), backend }
    }

    pub fn with_pivot(mut self, pivot: impl Into<String>) -> Self {
        self.pivot_language = pivot.into();
        self
    }
}

/// English -> pivot -> English. Empty text is returned without calling the backend.
pub fn back_translate<T: Translator>(text: &str, adapter: &TranslatorAdapter<T>) -> Result<String, TranslateError> {
    if text.is_empty() {
        return Ok(String::new());
    }
    let pivot = adapter.backend.translate(text, SOURCE_LANGUAGE, &adapter.pivot_language)?;
    adapter.backend.translate(&pivot, &adapter.pivot_language, SOURCE_LANGUAGE)
}

/// A training row after balancing. `origin` is set on generated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedExample {
    pub sample_id: String,
    pub text: String,
    pub class: usize,
    pub origin: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BalanceReport {
    pub augmented: usize,
    /// Generated rows whose text equals their origin's.
    pub unchanged: usize,
    /// `(origin id, error message)` for every generator failure.
    pub failures: Vec<(String, String)>,
    pub counts_before: BTreeMap<usize, usize>,
    pub counts_after: BTreeMap<usize, usize>,
}

/// Appends generated rows to every minority class until each class count
/// equals the majority count. Originals are kept, in input order, ahead of
/// the generated rows; generated rows follow in class order. Origins are
/// drawn uniformly with a generator seeded by `seed`. An origin whose
/// generation fails is reported and not drawn again.
pub fn balance_classes<F, E>(
    train: &[TaskExample],
    num_classes: usize,
    mut generate: F,
    seed: u64,
) -> Result<(Vec<BalancedExample>, BalanceReport), AugmentError>
where
    F: FnMut(&str) -> Result<String, E>,
    E: fmt::Display,
{
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, example) in train.iter().enumerate() {
        by_class[example.class].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(AugmentError::EmptyClass(empty));
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);

    let mut report = BalanceReport {
        counts_before: by_class.iter().enumerate().map(|(c, v)| (c, v.len())).collect(),
        ..BalanceReport::default()
    };
    let mut out: Vec<BalancedExample> = train
        .iter()
        .map(|e| BalancedExample { sample_id: e.sample_id.clone(), text: e.text.clone(), class: e.class, origin: None })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (class, members) in by_class.iter().enumerate() {
        let mut pool = members.clone();
        let mut have = members.len();
        let mut counter = 0usize;
        let mut failures = 0usize;
        while have < majority {
            if pool.is_empty() {
                return Err(AugmentError::ClassExhausted { class, failures });
            }
            let slot = rng.gen_range(0..pool.len());
            let origin = &train[pool[slot]];
            match generate(&origin.text) {
                Ok(text) => {
                    if text == origin.text {
                        report.unchanged += 1;
                    }
                    out.push(BalancedExample {
                        sample_id: format!("{}#aug{counter}", origin.sample_id),
                        text,
                        class,
                        origin: Some(origin.sample_id.clone()),
                    });
                    counter += 1;
                    have += 1;
                    report.augmented += 1;
                }
                Err(e) => {
                    log::warn!("augmentation of `{}` failed: {e}", origin.sample_id);
                    report.failures.push((origin.sample_id.clone(), e.to_string()));
                    failures += 1;
                    pool.swap_remove(slot);
                }
            }
        }
    }
    report.counts_after = (0..num_classes)
        .map(|c| (c, out.iter().filter(|e| e.class == c).count()))
        .collect();
    Ok((out, report))
}
