//! Non-neural benchmark: mean-pooled word vectors into logistic regression.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::TaskExample;
use crate::math::{sigmoid, solve_dense};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vector file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("vector file line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("vector file contains no entries")]
    EmptyTable,
    #[error("need at least two samples of each class")]
    SingleClass,
    #[error("{0} feature vectors but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("feature vector {0} is not finite")]
    NonFinite(usize),
    #[error("feature vector {index} has dimension {found}, model expects {expected}")]
    FeatureDimension { index: usize, expected: usize, found: usize },
    #[error("Newton step produced a singular system")]
    Singular,
}

/// Token to fixed-dimension vector lookup, stored as `f32`.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dimension: usize,
    entries: HashMap<String, Vec<f32>>,
}

impl WordVectorTable {
    pub fn from_entries(dimension: usize, entries: HashMap<String, Vec<f32>>) -> Result<Self, BaselineError> {
        if entries.is_empty() {
            return Err(BaselineError::EmptyTable);
        }
        if let Some(v) = entries.values().find(|v| v.len() != dimension) {
            return Err(BaselineError::DimensionMismatch { line: 0, expected: dimension, found: v.len() });
        }
        Ok(WordVectorTable { dimension, entries })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.entries.get(token).map(Vec::as_slice)
    }
}

pub fn load_vectors(path: &Path) -> Result<WordVectorTable, BaselineError> {
    let file =
        std::fs::File::open(path).map_err(|source| BaselineError::Io { path: path.to_owned(), source })?;
    read_vectors(std::io::BufReader::new(file))
}

/// Reads `token v1 ... vd` lines. The first line fixes `d`. Tokens are
/// lowercased; when two lines collide the first one is kept.
pub fn read_vectors<R: BufRead>(reader: R) -> Result<WordVectorTable, BaselineError> {
    let mut dimension = None;
    let mut entries = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| BaselineError::Io { path: "<vectors>".into(), source })?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let vector = fields
            .map(|f| f.parse::<f32>())
            .collect::<Result<Vec<f32>, _>>()
            .map_err(|e| BaselineError::Malformed { line: lineno, reason: e.to_string() })?;
        if vector.is_empty() {
            return Err(BaselineError::Malformed { line: lineno, reason: "token without vector".into() });
        }
        let expected = *dimension.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(BaselineError::DimensionMismatch { line: lineno, expected, found: vector.len() });
        }
        entries.entry(token.to_lowercase()).or_insert(vector);
    }
    let dimension = dimension.ok_or(BaselineError::EmptyTable)?;
    Ok(WordVectorTable { dimension, entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEmbedding {
    pub vector: Vec<f64>,
    /// Set when no token was in vocabulary; `vector` is then all zeros.
    pub all_oov: bool,
}

/// Mean of the vectors of in-vocabulary whitespace tokens. OOV tokens are skipped.
pub fn embed_mean(text: &str, table: &WordVectorTable) -> MeanEmbedding {
    let mut sum = vec![0.0f64; table.dimension];
    let mut hits = 0usize;
    for token in text.split_whitespace() {
        if let Some(v) = table.get(token) {
            for (s, &x) in sum.iter_mut().zip(v) {
                *s += f64::from(x);
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return MeanEmbedding { vector: sum, all_oov: true };
    }
    for s in &mut sum {
        *s /= hits as f64;
    }
    MeanEmbedding { vector: sum, all_oov: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Strength of the `0.5 * l2 * |w|^2` penalty. The bias is not penalised.
    pub l2: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1.0, tolerance: 1e-6, max_iter: 1000 }
    }
}

/// Binary logistic regression; `weights` holds the feature weights followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub regularization_strength: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn dimension(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let d = self.dimension();
        self.weights[..d].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.weights[d]
    }
}

fn objective(x: &[Vec<f64>], y: &[bool], w: &[f64], l2: f64) -> f64 {
    let d = w.len() - 1;
    let mut total = 0.5 * l2 * w[..d].iter().map(|v| v * v).sum::<f64>();
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d];
        // log(1 + e^z) - y z, computed stably
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += softplus - if yi { z } else { 0.0 };
    }
    total
}

/// Maximum-likelihood fit with an L2 penalty on the weights, by Newton's
/// method with step halving. Deterministic for fixed inputs.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], config: &LogisticConfig) -> Result<LogisticModel, BaselineError> {
    if x.len() != y.len() {
        return Err(BaselineError::LengthMismatch(x.len(), y.len()));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if x.len() < 2 || positives == 0 || positives == y.len() {
        return Err(BaselineError::SingleClass);
    }
    let d = x[0].len();
    for (i, xi) in x.iter().enumerate() {
        if xi.len() != d {
            return Err(BaselineError::FeatureDimension { index: i, expected: d, found: xi.len() });
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite(i));
        }
    }

    let p = d + 1;
    let mut w = vec![0.0; p];
    let mut current = objective(x, y, &w, config.l2);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for (xi, &yi) in x.iter().zip(y) {
            let z = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
            let prob = sigmoid(z);
            let residual = prob - if yi { 1.0 } else { 0.0 };
            let s = prob * (1.0 - prob);
            let feature = |k: usize| if k < d { xi[k] } else { 1.0 };
            for a in 0..p {
                let fa = feature(a);
                grad[a] += residual * fa;
                let sfa = s * fa;
                for b in a..p {
                    hess[a * p + b] += sfa * feature(b);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[a * p + b] = hess[b * p + a];
            }
        }
        for k in 0..d {
            grad[k] += config.l2 * w[k];
            hess[k * p + k] += config.l2;
        }
        hess[d * p + d] += 1e-10;

        let step = solve_dense(hess, grad).ok_or(BaselineError::Singular)?;
        let mut scale = 1.0;
        let mut candidate;
        loop {
            candidate = w.iter().zip(&step).map(|(w, s)| w - scale * s).collect::<Vec<_>>();
            let value = objective(x, y, &candidate, config.l2);
            if value <= current || scale < 1e-8 {
                current = value;
                break;
            }
            scale *= 0.5;
        }
        let change = step.iter().map(|s| (scale * s).abs()).fold(0.0, f64::max);
        w = candidate;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(LogisticModel { weights: w, regularization_strength: config.l2, iterations, converged })
}

/// Positive-class probability per row.
pub fn predict_logistic(model: &LogisticModel, x: &[Vec<f64>]) -> Result<Vec<f64>, BaselineError> {
    let d = model.dimension();
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            if xi.len() != d {
                Err(BaselineError::FeatureDimension { index: i, expected: d, found: xi.len() })
            } else {
                Ok(sigmoid(model.score(xi)))
            }
        })
        .collect()
}

/// Decision cutoff for the baseline: the sign of the affine score.
pub const BASELINE_THRESHOLD: f64 = 0.5;

/// Mean embeddings for a batch of texts plus the number that were all-OOV.
pub fn featurize<'a>(texts: impl IntoIterator<Item = &'a str>, table: &WordVectorTable) -> (Vec<Vec<f64>>, usize) {
    let mut oov = 0;
    let features = texts
        .into_iter()
        .map(|t| {
            let e = embed_mean(t, table);
            oov += usize::from(e.all_oov);
            e.vector
        })
        .collect();
    (features, oov)
}

/// Fits the baseline on subtask-A examples (class 1 is the positive class).
pub fn fit_baseline(
    train: &[TaskExample],
    table: &WordVectorTable,
    config: &LogisticConfig,
) -> Result<LogisticModel, BaselineError> {
    let (x, oov) = featurize(train.iter().map(|e| e.text.as_str()), table);
    if oov > 0 {
        log::info!("{oov} of {} training texts have no in-vocabulary token", train.len());
    }
    let y: Vec<bool> = train.iter().map(|e| e.class == 1).collect();
    fit_logistic(&x, &y, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> WordVectorTable {
        read_vectors("cat 1 2\ndog 3 -4\nthe 0 0\n".as_bytes()).unwrap()
    }

    #[test]
    fn loads_fifty_dimensional_lines() {
        let line = |tok: &str| format!("{tok} {}\n", vec!["0.5"; 50].join(" "));
        let table = read_vectors(format!("{}{}", line("a"), line("b")).as_bytes()).unwrap();
        assert_eq!((table.len(), table.dimension()), (2, 50));
    }

    #[test]
    fn rejects_short_line_with_number() {
        let text = format!("a {}\nb {}\n", vec!["1"; 50].join(" "), vec!["1"; 49].join(" "));
        let err = read_vectors(text.as_bytes()).unwrap_err();
        assert!(matches!(err, BaselineError::DimensionMismatch { line: 2, expected: 50, found: 49 }));
    }

    #[test]
    fn rejects_empty_and_garbage() {
        assert!(matches!(read_vectors("".as_bytes()), Err(BaselineError::EmptyTable)));
        assert!(matches!(read_vectors("a 1 x\n".as_bytes()), Err(BaselineError::Malformed { line: 1, .. })));
        assert!(matches!(load_vectors(Path::new("/no/such/file")), Err(BaselineError::Io { .. })));
    }

    #[test]
    fn mean_pooling() {
        let t = table();
        assert_eq!(embed_mean("cat", &t).vector, vec![1.0, 2.0]);
        assert_eq!(embed_mean("cat dog", &t).vector, vec![2.0, -1.0]);
        assert_eq!(embed_mean("cat zebra", &t).vector, vec![1.0, 2.0]);
        let oov = embed_mean("zebra okapi", &t);
        assert!(oov.all_oov);
        assert_eq!(oov.vector, vec![0.0, 0.0]);
        assert!(embed_mean("", &t).all_oov);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_logistic(&x, &[true, true], &LogisticConfig::default()), Err(BaselineError::SingleClass)));
        assert!(matches!(
            fit_logistic(&x, &[true], &LogisticConfig::default()),
            Err(BaselineError::LengthMismatch(2, 1))
        ));
        let bad = vec![vec![f64::NAN], vec![1.0]];
        assert!(matches!(
            fit_logistic(&bad, &[true, false], &LogisticConfig::default()),
            Err(BaselineError::NonFinite(0))
        ));
    }

    #[test]
    fn zero_weights_give_half() {
        let model = LogisticModel { weights: vec![0.0; 3], regularization_strength: 1.0, iterations: 0, converged: true };
        let p = predict_logistic(&model, &[vec![5.0, -2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(predict_logistic(&model, &[vec![1.0]]).is_err());
    }

    #[test]
    fn saturation() {
        let model = LogisticModel { weights: vec![1.0, 0.0], regularization_strength: 1.0, iterations: 0, converged: true };
        let p = predict_logistic(&model, &[vec![30.0]]).unwrap()[0];
        assert!((1.0 - p).abs() < 1e-6);
    }

    #[test]
    fn hand_computed_probabilities() {
        // w = (0.5, -1), b = 0.25
        let model =
            LogisticModel { weights: vec![0.5, -1.0, 0.25], regularization_strength: 1.0, iterations: 0, converged: true };
        let x = vec![vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 0.5]];
        // scores: -0.25, 1.25, -0.25
        let expected = [1.0 / (1.0 + 0.25f64.exp()), 1.0 / (1.0 + (-1.25f64).exp()), 1.0 / (1.0 + 0.25f64.exp())];
        for (p, e) in predict_logistic(&model, &x).unwrap().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_reaches_stationary_point() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let y: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let config = LogisticConfig::default();
        let model = fit_logistic(&x, &y, &config).unwrap();
        assert!(model.converged);
        // gradient of the penalised objective vanishes at the optimum
        let mut grad = vec![0.0; 3];
        for (xi, &yi) in x.iter().zip(&y) {
            let r = sigmoid(model.score(xi)) - if yi { 1.0 } else { 0.0 };
            grad[0] += r * xi[0];
            grad[1] += r * xi[1];
            grad[2] += r;
        }
        grad[0] += config.l2 * model.weights[0];
        grad[1] += config.l2 * model.weights[1];
        assert!(grad.iter().all(|g| g.abs() < 1e-8), "{grad:?}");
    }
}
