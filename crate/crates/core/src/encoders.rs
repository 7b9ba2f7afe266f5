//! Pooled text encoders and the two-encoder concatenation ensemble.
//!
//! Every encoder maps a batch of texts to a `batch x output_dim` matrix.
//! Trainable encoders also expose a flat parameter vector and the gradient
//! of that vector given upstream gradients on their output, which is all the
//! training harness needs to fine-tune them jointly with a head.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::math::fnv1a;

pub const TINY_TEST: &str = "tiny-test";
pub const DEFAULT_TINY_BUCKETS: usize = 1024;
pub const DEFAULT_TINY_MAX_LEN: usize = 128;
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("unknown encoder `{0}`")]
    UnknownEncoder(String),
    #[error("bad encoder spec `{spec}`: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("checkpoint for `{name}` not available at {path}")]
    CheckpointUnavailable { name: String, path: PathBuf },
    #[error("checkpoint for `{name}`: {reason}")]
    BadCheckpoint { name: String, reason: String },
    #[error("`{name}` has no embedding for text `{text}`")]
    MissingEmbedding { name: String, text: String },
    #[error("cannot build an ensemble from one encoder instance")]
    SameInstance,
    #[error("encoder `{0}` cannot be trained")]
    NotTrainable(String),
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("gradient has shape {found:?}, expected {expected:?}")]
    GradShape { expected: (usize, usize), found: (usize, usize) },
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

fn next_instance() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

/// A text encoder producing one fixed-width vector per text.
///
/// Clones share their instance id: a clone stands for the same weights, so
/// [`make_ensemble`] refuses to pair an encoder with its own clone.
pub trait PooledEncoder: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;
    /// Loader spec strings that rebuild this encoder through [`EncoderRegistry`].
    fn specs(&self) -> Vec<String>;
    fn output_dim(&self) -> usize;
    fn tokenizer_ref(&self) -> &str;
    fn trainable(&self) -> bool;
    fn set_trainable(&mut self, trainable: bool) -> Result<(), EncoderError>;
    fn instance_ids(&self) -> Vec<u64>;
    fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, EncoderError>;
    /// Number of inputs truncated so far.
    fn truncations(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<(), EncoderError>;
    /// Gradient of the parameters given `d loss / d encode(texts)`.
    fn backward(&self, texts: &[&str], grad_output: ArrayView2<'_, f64>) -> Result<Vec<f64>, EncoderError>;
    fn box_clone(&self) -> Box<dyn PooledEncoder>;
}

impl Clone for Box<dyn PooledEncoder> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Offline stand-in for a transformer: tokens are hashed into buckets, each
/// bucket owns a seeded random vector, and the pooled output is the mean of
/// the bucket vectors of the (tail-truncated) token sequence.
#[derive(Debug)]
pub struct TinyTestEncoder {
    instance: u64,
    dim: usize,
    seed: u64,
    buckets: usize,
    max_len: usize,
    trainable: bool,
    table: Vec<f64>,
    truncated: AtomicUsize,
}

impl Clone for TinyTestEncoder {
    fn clone(&self) -> Self {
        TinyTestEncoder {
            table: self.table.clone(),
            truncated: AtomicUsize::new(self.truncated.load(Ordering::Relaxed)),
            ..*self
        }
    }
}

impl TinyTestEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_options(dim, seed, DEFAULT_TINY_BUCKETS, DEFAULT_TINY_MAX_LEN)
    }

    pub fn with_options(dim: usize, seed: u64, buckets: usize, max_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..buckets * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TinyTestEncoder {
            instance: next_instance(),
            dim,
            seed,
            buckets,
            max_len,
            trainable: true,
            table,
            truncated: AtomicUsize::new(0),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.buckets as u64) as usize
    }

    fn tokens<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() > self.max_len {
            tokens.truncate(self.max_len);
            self.truncated.fetch_add(1, Ordering::Relaxed);
        }
        tokens
    }
}

impl PooledEncoder for TinyTestEncoder {
    fn name(&self) -> &str {
        TINY_TEST
    }

    fn specs(&self) -> Vec<String> {
        let mut spec = format!("{TINY_TEST}:dim={},seed={}", self.dim, self.seed);
        if self.buckets != DEFAULT_TINY_BUCKETS {
            spec.push_str(&format!(",buckets={}", self.buckets));
        }
        if self.max_len != DEFAULT_TINY_MAX_LEN {
            spec.push_str(&format!(",max_len={}", self.max_len));
        }
        if !self.trainable {
            spec.push_str(",frozen");
        }
        vec![spec]
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn tokenizer_ref(&self) -> &str {
        "whitespace"
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn set_trainable(&mut self, trainable: bool) -> Result<(), EncoderError> {
        self.trainable = trainable;
        Ok(())
    }

    fn instance_ids(&self) -> Vec<u64> {
        vec![self.instance]
    }

    fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, EncoderError> {
        let mut out = Array2::zeros((texts.len(), self.dim));
        for (i, text) in texts.iter().enumerate() {
            let tokens = self.tokens(text);
            if tokens.is_empty() {
                continue;
            }
            let mut row = out.row_mut(i);
            for token in &tokens {
                let b = self.bucket(token);
                for (o, &t) in row.iter_mut().zip(&self.table[b * self.dim..(b + 1) * self.dim]) {
                    *o += t;
                }
            }
            row /= tokens.len() as f64;
        }
        Ok(out)
    }

    fn truncations(&self) -> usize {
        self.truncated.load(Ordering::Relaxed)
    }

    fn num_params(&self) -> usize {
        self.table.len()
    }

    fn params(&self) -> Vec<f64> {
        self.table.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<(), EncoderError> {
        if params.len() != self.table.len() {
            return Err(EncoderError::ParamLength { expected: self.table.len(), found: params.len() });
        }
        self.table.copy_from_slice(params);
        Ok(())
    }

    fn backward(&self, texts: &[&str], grad_output: ArrayView2<'_, f64>) -> Result<Vec<f64>, EncoderError> {
        check_grad_shape(grad_output, texts.len(), self.dim)?;
        let mut grad = vec![0.0; self.table.len()];
        for (i, text) in texts.iter().enumerate() {
            let tokens = self.tokens(text);
            if tokens.is_empty() {
                continue;
            }
            let scale = 1.0 / tokens.len() as f64;
            let upstream = grad_output.row(i);
            for token in &tokens {
                let b = self.bucket(token);
                for (g, &u) in grad[b * self.dim..(b + 1) * self.dim].iter_mut().zip(upstream.iter()) {
                    *g += u * scale;
                }
            }
        }
        Ok(grad)
    }

    fn box_clone(&self) -> Box<dyn PooledEncoder> {
        Box::new(self.clone())
    }
}

fn check_grad_shape(grad: ArrayView2<'_, f64>, rows: usize, cols: usize) -> Result<(), EncoderError> {
    if grad.dim() != (rows, cols) {
        return Err(EncoderError::GradShape { expected: (rows, cols), found: grad.dim() });
    }
    Ok(())
}

/// Frozen pooled embeddings exported from a pretrained backbone, looked up by
/// exact text. The checkpoint directory holds `embeddings.jsonl` with one
/// `{"text": ..., "vector": [...]}` object per line.
#[derive(Debug)]
pub struct PrecomputedEncoder {
    instance: u64,
    name: String,
    spec: String,
    tokenizer_ref: String,
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl Clone for PrecomputedEncoder {
    fn clone(&self) -> Self {
        PrecomputedEncoder {
            instance: self.instance,
            name: self.name.clone(),
            spec: self.spec.clone(),
            tokenizer_ref: self.tokenizer_ref.clone(),
            dim: self.dim,
            table: self.table.clone(),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingLine {
    text: String,
    vector: Vec<f32>,
}

impl PrecomputedEncoder {
    pub fn load(spec: &str, pretrained: &PretrainedSpec, dir: &Path) -> Result<Self, EncoderError> {
        let path = dir.join(EMBEDDINGS_FILE);
        let unavailable =
            || EncoderError::CheckpointUnavailable { name: pretrained.name.to_owned(), path: path.clone() };
        let file = std::fs::File::open(&path).map_err(|_| unavailable())?;
        let bad = |reason: String| EncoderError::BadCheckpoint { name: pretrained.name.to_owned(), reason };
        let mut table = HashMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: EmbeddingLine =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            if entry.vector.len() != pretrained.output_dim {
                return Err(bad(format!(
                    "line {}: vector has {} components, expected {}",
                    i + 1,
                    entry.vector.len(),
                    pretrained.output_dim
                )));
            }
            table.insert(entry.text, entry.vector);
        }
        Ok(PrecomputedEncoder {
            instance: next_instance(),
            name: pretrained.name.to_owned(),
            spec: spec.to_owned(),
            tokenizer_ref: pretrained.tokenizer.to_owned(),
            dim: pretrained.output_dim,
            table,
        })
    }
}

impl PooledEncoder for PrecomputedEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn specs(&self) -> Vec<String> {
        vec![self.spec.clone()]
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn tokenizer_ref(&self) -> &str {
        &self.tokenizer_ref
    }

    fn trainable(&self) -> bool {
        false
    }

    fn set_trainable(&mut self, trainable: bool) -> Result<(), EncoderError> {
        if trainable {
            return Err(EncoderError::NotTrainable(self.name.clone()));
        }
        Ok(())
    }

    fn instance_ids(&self) -> Vec<u64> {
        vec![self.instance]
    }

    fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, EncoderError> {
        let mut out = Array2::zeros((texts.len(), self.dim));
        for (i, text) in texts.iter().enumerate() {
            let v = self.table.get(*text).ok_or_else(|| EncoderError::MissingEmbedding {
                name: self.name.clone(),
                text: (*text).to_owned(),
            })?;
            for (o, &x) in out.row_mut(i).iter_mut().zip(v) {
                *o = f64::from(x);
            }
        }
        Ok(out)
    }

    fn truncations(&self) -> usize {
        0
    }

    fn num_params(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<(), EncoderError> {
        if !params.is_empty() {
            return Err(EncoderError::ParamLength { expected: 0, found: params.len() });
        }
        Ok(())
    }

    fn backward(&self, texts: &[&str], grad_output: ArrayView2<'_, f64>) -> Result<Vec<f64>, EncoderError> {
        check_grad_shape(grad_output, texts.len(), self.dim)?;
        Ok(Vec::new())
    }

    fn box_clone(&self) -> Box<dyn PooledEncoder> {
        Box::new(self.clone())
    }
}

/// `[first.encode(t) ‖ second.encode(t)]`, trained jointly: gradients on the
/// output are split column-wise and routed to both members.
#[derive(Debug, Clone)]
pub struct ConcatEnsembleEncoder {
    name: String,
    first: Box<dyn PooledEncoder>,
    second: Box<dyn PooledEncoder>,
}

pub fn make_ensemble(
    first: Box<dyn PooledEncoder>,
    second: Box<dyn PooledEncoder>,
) -> Result<ConcatEnsembleEncoder, EncoderError> {
    let ids: HashSet<u64> = first.instance_ids().into_iter().collect();
    if second.instance_ids().iter().any(|id| ids.contains(id)) {
        return Err(EncoderError::SameInstance);
    }
    let name = format!("{}+{}", first.name(), second.name());
    Ok(ConcatEnsembleEncoder { name, first, second })
}

impl ConcatEnsembleEncoder {
    pub fn first(&self) -> &dyn PooledEncoder {
        self.first.as_ref()
    }

    pub fn second(&self) -> &dyn PooledEncoder {
        self.second.as_ref()
    }
}

impl PooledEncoder for ConcatEnsembleEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn specs(&self) -> Vec<String> {
        let mut specs = self.first.specs();
        specs.extend(self.second.specs());
        specs
    }

    fn output_dim(&self) -> usize {
        self.first.output_dim() + self.second.output_dim()
    }

    fn tokenizer_ref(&self) -> &str {
        self.first.tokenizer_ref()
    }

    fn trainable(&self) -> bool {
        self.first.trainable() || self.second.trainable()
    }

    fn set_trainable(&mut self, trainable: bool) -> Result<(), EncoderError> {
        self.first.set_trainable(trainable)?;
        self.second.set_trainable(trainable)
    }

    fn instance_ids(&self) -> Vec<u64> {
        let mut ids = self.first.instance_ids();
        ids.extend(self.second.instance_ids());
        ids
    }

    fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, EncoderError> {
        let a = self.first.encode(texts)?;
        let b = self.second.encode(texts)?;
        let split = a.ncols();
        let mut out = Array2::zeros((texts.len(), self.output_dim()));
        out.slice_mut(s![.., ..split]).assign(&a);
        out.slice_mut(s![.., split..]).assign(&b);
        Ok(out)
    }

    fn truncations(&self) -> usize {
        self.first.truncations() + self.second.truncations()
    }

    fn num_params(&self) -> usize {
        self.first.num_params() + self.second.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<(), EncoderError> {
        let expected = self.num_params();
        if params.len() != expected {
            return Err(EncoderError::ParamLength { expected, found: params.len() });
        }
        let (a, b) = params.split_at(self.first.num_params());
        self.first.set_params(a)?;
        self.second.set_params(b)
    }

    fn backward(&self, texts: &[&str], grad_output: ArrayView2<'_, f64>) -> Result<Vec<f64>, EncoderError> {
        check_grad_shape(grad_output, texts.len(), self.output_dim())?;
        let split = self.first.output_dim();
        let mut grad = if self.first.trainable() {
            self.first.backward(texts, grad_output.slice(s![.., ..split]))?
        } else {
            vec![0.0; self.first.num_params()]
        };
        if self.second.trainable() {
            grad.extend(self.second.backward(texts, grad_output.slice(s![.., split..]))?);
        } else {
            grad.extend(std::iter::repeat_n(0.0, self.second.num_params()));
        }
        Ok(grad)
    }

    fn box_clone(&self) -> Box<dyn PooledEncoder> {
        Box::new(self.clone())
    }
}

/// A named pretrained backbone the registry knows how to resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretrainedSpec {
    pub name: &'static str,
    pub checkpoint: &'static str,
    pub tokenizer: &'static str,
    pub output_dim: usize,
}

pub const PRETRAINED: &[PretrainedSpec] = &[
    PretrainedSpec {
        name: "bert-base-uncased",
        checkpoint: "bert-base-uncased",
        tokenizer: "bert-base-uncased",
        output_dim: 768,
    },
    PretrainedSpec {
        name: "ft-roberta",
        checkpoint: "annahaz/xlm-roberta-base-misogyny-sexism-tweets",
        tokenizer: "annahaz/xlm-roberta-base-misogyny-sexism-tweets",
        output_dim: 768,
    },
    PretrainedSpec {
        name: "pt-roberta",
        checkpoint: "HPL/roberta-large-unlabeled-labeled-gab-reddit-task-semeval2023-t10-270000sample",
        tokenizer: "roberta-large",
        output_dim: 1024,
    },
    PretrainedSpec {
        name: "deberta",
        checkpoint: "microsoft/deberta-base",
        tokenizer: "microsoft/deberta-base",
        output_dim: 768,
    },
    PretrainedSpec {
        name: "sbert",
        checkpoint: "sentence-transformers/all-mpnet-base-v2",
        tokenizer: "sentence-transformers/all-mpnet-base-v2",
        output_dim: 768,
    },
    PretrainedSpec {
        name: "hatebert",
        checkpoint: "GroNLP/hateBERT",
        tokenizer: "GroNLP/hateBERT",
        output_dim: 768,
    },
];

/// Named two-encoder ensembles.
pub const ENSEMBLES: &[(&str, [&str; 2])] =
    &[("ensemble1", ["pt-roberta", "deberta"]), ("ensemble2", ["pt-roberta", "sbert"])];

pub fn ensemble_members(name: &str) -> Option<[&'static str; 2]> {
    ENSEMBLES.iter().find(|(n, _)| *n == name).map(|(_, m)| *m)
}

/// Resolves loader specs to encoders.
///
/// * `tiny-test:dim=16,seed=7[,buckets=N][,max_len=N][,frozen]`
/// * a pretrained name (`bert-base-uncased` or `bert`, `ft-roberta`,
///   `pt-roberta`, `deberta`, `sbert`, `hatebert`), optionally `name@dir`;
///   without `@dir` the checkpoint is looked up at `<checkpoint_root>/<name>`.
#[derive(Debug, Clone, Default)]
pub struct EncoderRegistry {
    pub checkpoint_root: Option<PathBuf>,
}

impl EncoderRegistry {
    pub fn new(checkpoint_root: Option<PathBuf>) -> Self {
        EncoderRegistry { checkpoint_root }
    }

    pub fn pretrained(name: &str) -> Option<&'static PretrainedSpec> {
        let name = if name == "bert" { "bert-base-uncased" } else { name };
        PRETRAINED.iter().find(|p| p.name == name)
    }

    pub fn register_encoder(&self, spec: &str) -> Result<Box<dyn PooledEncoder>, EncoderError> {
        let spec = spec.trim();
        if let Some(rest) = spec.strip_prefix(TINY_TEST) {
            return parse_tiny(spec, rest).map(|e| Box::new(e) as Box<dyn PooledEncoder>);
        }
        let (name, dir) = match spec.split_once('@') {
            Some((name, dir)) => (name, Some(PathBuf::from(dir))),
            None => (spec, None),
        };
        let pretrained =
            Self::pretrained(name).ok_or_else(|| EncoderError::UnknownEncoder(name.to_owned()))?;
        let dir = match dir.or_else(|| self.checkpoint_root.as_ref().map(|r| r.join(pretrained.name))) {
            Some(dir) => dir,
            None => {
                return Err(EncoderError::CheckpointUnavailable {
                    name: pretrained.name.to_owned(),
                    path: PathBuf::from(pretrained.checkpoint),
                })
            }
        };
        Ok(Box::new(PrecomputedEncoder::load(spec, pretrained, &dir)?))
    }

    /// One spec gives a single encoder; two give their concatenation. A
    /// single named ensemble (`ensemble1`, `ensemble2`) expands to its members.
    pub fn resolve(&self, specs: &[String]) -> Result<Box<dyn PooledEncoder>, EncoderError> {
        match specs {
            [one] => match ensemble_members(one) {
                Some([a, b]) => self.resolve(&[a.to_owned(), b.to_owned()]),
                None => self.register_encoder(one),
            },
            [a, b] => Ok(Box::new(make_ensemble(self.register_encoder(a)?, self.register_encoder(b)?)?)),
            _ => Err(EncoderError::BadSpec {
                spec: specs.join(";"),
                reason: "expected one encoder or a pair".into(),
            }),
        }
    }
}

fn parse_tiny(spec: &str, rest: &str) -> Result<TinyTestEncoder, EncoderError> {
    let bad = |reason: String| EncoderError::BadSpec { spec: spec.to_owned(), reason };
    let options = match rest {
        "" => "",
        r => r.strip_prefix(':').ok_or_else(|| bad("expected `tiny-test:key=value,...`".into()))?,
    };
    let mut values = BTreeMap::new();
    let mut frozen = false;
    for part in options.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "frozen" {
            frozen = true;
            continue;
        }
        let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("option `{part}` lacks `=`")))?;
        let value: u64 = value.trim().parse().map_err(|_| bad(format!("option `{key}` is not an integer")))?;
        values.insert(key.trim(), value);
    }
    for key in values.keys() {
        if !matches!(*key, "dim" | "seed" | "buckets" | "max_len") {
            return Err(bad(format!("unknown option `{key}`")));
        }
    }
    let get = |key: &str, default: u64| values.get(key).copied().unwrap_or(default) as usize;
    let dim = get("dim", 16);
    let buckets = get("buckets", DEFAULT_TINY_BUCKETS as u64);
    let max_len = get("max_len", DEFAULT_TINY_MAX_LEN as u64);
    if dim == 0 || buckets == 0 || max_len == 0 {
        return Err(bad("dim, buckets and max_len must be positive".into()));
    }
    let mut encoder = TinyTestEncoder::with_options(dim, get("seed", 0) as u64, buckets, max_len);
    encoder.trainable = !frozen;
    Ok(encoder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> EncoderRegistry {
        EncoderRegistry::default()
    }

    #[test]
    fn tiny_is_deterministic_and_shaped() {
        let enc = registry().register_encoder("tiny-test:dim=16,seed=7").unwrap();
        assert_eq!(enc.output_dim(), 16);
        let a = enc.encode(&["hello world", "hello world", "other"]).unwrap();
        assert_eq!(a.dim(), (3, 16));
        assert_eq!(a.row(0), a.row(1));
        let again = registry().register_encoder("tiny-test:dim=16,seed=7").unwrap();
        assert_eq!(again.encode(&["hello world"]).unwrap().row(0), a.row(0));
    }

    #[test]
    fn tiny_spec_round_trip() {
        let spec = "tiny-test:dim=8,seed=3,buckets=64,max_len=4,frozen";
        let enc = registry().register_encoder(spec).unwrap();
        assert_eq!(enc.specs(), vec![spec.to_owned()]);
        assert!(!enc.trainable());
        assert!(registry().register_encoder("tiny-test:dim=x").is_err());
        assert!(registry().register_encoder("tiny-test:width=3").is_err());
        assert!(registry().register_encoder("tiny-testing").is_err());
    }

    #[test]
    fn truncation_keeps_width() {
        let enc = TinyTestEncoder::with_options(4, 1, 32, 3);
        let out = enc.encode(&["a b c d e f", "a b c"]).unwrap();
        assert_eq!(out.ncols(), 4);
        assert_eq!(enc.truncations(), 1);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn empty_text_encodes_to_zeros() {
        let enc = TinyTestEncoder::new(4, 1);
        assert!(enc.encode(&[""]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ensemble_is_blockwise() {
        let a = TinyTestEncoder::new(16, 1);
        let b = TinyTestEncoder::new(8, 2);
        let texts = ["one two", "three"];
        let ea = a.encode(&texts).unwrap();
        let eb = b.encode(&texts).unwrap();
        let ens = make_ensemble(Box::new(a), Box::new(b)).unwrap();
        assert_eq!(ens.output_dim(), 24);
        let out = ens.encode(&texts).unwrap();
        assert_eq!(out.slice(s![.., ..16]), ea);
        assert_eq!(out.slice(s![.., 16..]), eb);
    }

    #[test]
    fn swapped_ensemble_is_block_swap() {
        let a = TinyTestEncoder::new(5, 1);
        let b = TinyTestEncoder::new(3, 2);
        let ab = make_ensemble(Box::new(a.clone()), Box::new(b.clone())).unwrap();
        let ba = make_ensemble(Box::new(b), Box::new(a)).unwrap();
        let texts = ["x y z"];
        let x = ab.encode(&texts).unwrap();
        let y = ba.encode(&texts).unwrap();
        assert_eq!(x.slice(s![.., ..5]), y.slice(s![.., 3..]));
        assert_eq!(x.slice(s![.., 5..]), y.slice(s![.., ..3]));
    }

    #[test]
    fn ensemble_with_itself_rejected() {
        let a = TinyTestEncoder::new(4, 1);
        let err = make_ensemble(Box::new(a.clone()), Box::new(a)).unwrap_err();
        assert!(matches!(err, EncoderError::SameInstance));
    }

    #[test]
    fn ensemble_params_split() {
        let mut ens =
            make_ensemble(Box::new(TinyTestEncoder::with_options(2, 1, 4, 8)), Box::new(TinyTestEncoder::with_options(3, 2, 4, 8)))
                .unwrap();
        assert_eq!(ens.num_params(), 8 + 12);
        let p: Vec<f64> = (0..20).map(f64::from).collect();
        ens.set_params(&p).unwrap();
        assert_eq!(ens.first().params(), p[..8]);
        assert_eq!(ens.second().params(), p[8..]);
        assert!(ens.set_params(&p[..3]).is_err());
    }

    #[test]
    fn named_ensembles() {
        assert_eq!(ensemble_members("ensemble1"), Some(["pt-roberta", "deberta"]));
        assert_eq!(ensemble_members("ensemble2"), Some(["pt-roberta", "sbert"]));
    }

    #[test]
    fn unknown_and_missing() {
        assert!(matches!(registry().register_encoder("no-such-model"), Err(EncoderError::UnknownEncoder(_))));
        let err = EncoderRegistry::new(Some("/nonexistent".into())).register_encoder("pt-roberta").unwrap_err();
        assert!(matches!(err, EncoderError::CheckpointUnavailable { ref name, .. } if name == "pt-roberta"));
        assert_eq!(EncoderRegistry::pretrained("pt-roberta").unwrap().output_dim, 1024);
    }

    #[test]
    fn precomputed_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("sbert")).unwrap();
        let v = |x: f32| format!("[{}]", vec![x.to_string(); 768].join(","));
        std::fs::write(
            root.join("sbert").join(EMBEDDINGS_FILE),
            format!("{{\"text\":\"hi\",\"vector\":{}}}\n{{\"text\":\"yo\",\"vector\":{}}}\n", v(0.5), v(-1.0)),
        )
        .unwrap();
        let reg = EncoderRegistry::new(Some(root.to_owned()));
        let mut enc = reg.register_encoder("sbert").unwrap();
        assert!(!enc.trainable());
        assert!(enc.set_trainable(true).is_err());
        let out = enc.encode(&["yo", "hi"]).unwrap();
        assert_eq!(out.dim(), (2, 768));
        assert_eq!(out[[0, 0]], -1.0);
        assert!(matches!(enc.encode(&["unseen"]), Err(EncoderError::MissingEmbedding { .. })));

        std::fs::create_dir(root.join("deberta")).unwrap();
        std::fs::write(root.join("deberta").join(EMBEDDINGS_FILE), "{\"text\":\"hi\",\"vector\":[1.0]}\n").unwrap();
        assert!(matches!(reg.register_encoder("deberta"), Err(EncoderError::BadCheckpoint { .. })));
    }
}
