//! Post normalisation: URL removal, hyphen/hashtag splitting, lowercasing,
//! slang expansion, punctuation stripping (apostrophes survive) and
//! whitespace collapse, always in that order.

use std::collections::HashMap;
use std::io::BufRead;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSample;

pub const DEFAULT_URL_PATTERN: &str = r"(?i)(?:https?://|www\.)\S*";

const SHIPPED_SLANG: &str = include_str!("../data/slang.txt");

#[derive(Debug, thiserror::Error)]
pub enum CleanError {
    #[error("cannot read slang map {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("slang map line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid url pattern: {0}")]
    Pattern(#[from] regex::Error),
}

#[derive(Debug, Clone)]
pub struct CleaningConfig {
    pub url_pattern: Regex,
    pub slang_map: HashMap<String, String>,
    pub lowercase: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            url_pattern: Regex::new(DEFAULT_URL_PATTERN).expect("default pattern compiles"),
            slang_map: HashMap::new(),
            lowercase: true,
        }
    }
}

impl CleaningConfig {
    pub fn with_slang(slang_map: HashMap<String, String>) -> Self {
        CleaningConfig { slang_map, ..Self::default() }
    }

    /// Default config with the slang dictionary bundled in `data/slang.txt`.
    pub fn shipped() -> Self {
        let map = parse_slang_map(SHIPPED_SLANG.as_bytes()).expect("shipped slang map parses");
        Self::with_slang(map)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub urls_removed: usize,
    pub slang_expanded: usize,
    pub chars_dropped: usize,
}

impl AddAssign for CleanReport {
    fn add_assign(&mut self, rhs: Self) {
        self.urls_removed += rhs.urls_removed;
        self.slang_expanded += rhs.slang_expanded;
        self.chars_dropped += rhs.chars_dropped;
    }
}

fn is_hyphen(c: char) -> bool {
    matches!(c, '-' | '\u{2010}' | '\u{2011}')
}

/// Characters surviving the strip step: non-uppercase letters and digits,
/// whitespace and the ASCII apostrophe.
fn keep_char(c: char) -> bool {
    c == '\'' || c.is_whitespace() || (c.is_alphanumeric() && !c.is_uppercase())
}

fn strip_token(token: &str) -> String {
    token.chars().filter(|&c| keep_char(c)).collect()
}

pub fn clean_text(raw: &str, config: &CleaningConfig) -> (String, CleanReport) {
    let mut report = CleanReport::default();

    // 1. URLs
    report.urls_removed = config.url_pattern.find_iter(raw).count();
    let text = config.url_pattern.replace_all(raw, " ");

    // 2. hyphens and hashtags become spaces; curly apostrophes become ASCII
    let text: String = text
        .chars()
        .map(|c| match c {
            '#' => ' ',
            '\u{2019}' => '\'',
            c if is_hyphen(c) => ' ',
            c => c,
        })
        .collect();

    // 3. lowercase
    let text = if config.lowercase { text.to_lowercase() } else { text };

    // 4. slang, whole tokens only
    let text = if config.slang_map.is_empty() {
        text
    } else {
        let mut tokens = Vec::new();
        for token in text.split_whitespace() {
            let expansion = config
                .slang_map
                .get(token)
                .or_else(|| config.slang_map.get(&strip_token(token)));
            match expansion {
                Some(expansion) => {
                    report.slang_expanded += 1;
                    tokens.push(expansion.as_str());
                }
                None => tokens.push(token),
            }
        }
        tokens.join(" ")
    };

    // 5. strip everything outside the kept classes
    let before = text.chars().count();
    let text: String = text.chars().filter(|&c| keep_char(c)).collect();
    report.chars_dropped = before - text.chars().count();

    // 6. collapse whitespace
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    (text, report)
}

pub fn load_slang_map(path: &Path) -> Result<HashMap<String, String>, CleanError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CleanError::Io { path: path.to_owned(), source })?;
    parse_slang_map(std::io::BufReader::new(file))
}

/// Parses `abbreviation=expansion` lines (or `abbreviation,expansion`).
/// Blank lines and lines starting with `#` are ignored. Keys and expansions
/// are lowercased; a repeated key keeps its last expansion.
pub fn parse_slang_map<R: BufRead>(reader: R) -> Result<HashMap<String, String>, CleanError> {
    let mut map = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CleanError::Io { path: PathBuf::from("<slang map>"), source })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| CleanError::Malformed { line: lineno, reason: reason.to_owned() };
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(','))
            .ok_or_else(|| malformed("expected `abbreviation=expansion`"))?;
        let key = key.trim().replace('\u{2019}', "'").to_lowercase();
        let value = value.trim().replace('\u{2019}', "'").to_lowercase();
        if key.is_empty() {
            return Err(malformed("empty abbreviation"));
        }
        if key.chars().any(char::is_whitespace) {
            return Err(malformed("abbreviation contains whitespace"));
        }
        if value.is_empty() {
            return Err(malformed("empty expansion"));
        }
        if let Some(previous) = map.insert(key.clone(), value) {
            log::warn!("slang map line {lineno}: `{key}` redefined (was `{previous}`)");
        }
    }
    Ok(map)
}

/// Cleans the text of every sample in a stream, leaving ids and labels alone.
/// The running [`CleanReport`] is available while and after iterating.
pub struct CleanCorpus<'a, I> {
    inner: I,
    config: &'a CleaningConfig,
    report: CleanReport,
}

impl<I> CleanCorpus<'_, I> {
    pub fn report(&self) -> CleanReport {
        self.report
    }
}

impl<I, E> Iterator for CleanCorpus<'_, I>
where
    I: Iterator<Item = Result<LabeledSample, E>>,
{
    type Item = Result<LabeledSample, E>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.inner.next()?.map(|mut sample| {
            let (text, report) = clean_text(&sample.text, self.config);
            sample.text = text;
            self.report += report;
            sample
        }))
    }
}

pub fn clean_corpus<I, E>(samples: I, config: &CleaningConfig) -> CleanCorpus<'_, I::IntoIter>
where
    I: IntoIterator<Item = Result<LabeledSample, E>>,
{
    CleanCorpus { inner: samples.into_iter(), config, report: CleanReport::default() }
}

/// In-memory convenience over [`clean_corpus`].
pub fn clean_samples(samples: Vec<LabeledSample>, config: &CleaningConfig) -> (Vec<LabeledSample>, CleanReport) {
    let mut stream = clean_corpus(samples.into_iter().map(Ok::<_, std::convert::Infallible>), config);
    let cleaned = stream.by_ref().map(|s| s.unwrap_or_else(|e| match e {})).collect();
    (cleaned, stream.report())
}
