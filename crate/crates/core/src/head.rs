//! Classification head over pooled embeddings:
//!
//! ```text
//! x -> dropout(p) -> linear(in, hidden) -> relu -> linear(hidden, out) -> sigmoid | softmax
//! ```
//!
//! Subtask A uses a single sigmoid unit with binary cross-entropy; B and C use
//! a softmax over their classes with categorical cross-entropy. Dropout only
//! touches the pooled embedding and uses inverted scaling, so eval mode is a
//! plain deterministic pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Activation, Decision, TaskSpec};
use crate::math::{argmax, sigmoid, softmax_in_place};

pub const DEFAULT_HIDDEN_DIM: usize = 256;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("embedding width {found} does not match head input {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("{targets} targets for a batch of {rows}")]
    TargetCount { rows: usize, targets: usize },
    #[error("target class {class} out of range for {outputs} outputs")]
    TargetRange { class: usize, outputs: usize },
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_outputs: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients of the mean batch loss.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// d loss / d input embedding (dropout mask already applied).
    pub input: Array2<f64>,
}

impl HeadGrads {
    pub fn flatten(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }
}

/// Serializable head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSnapshot {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_outputs: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl HeadModel {
    /// Xavier-uniform weights from a seeded stream, zero biases.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        task: &TaskSpec,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, HeadError> {
        let mut head = Self::zeros(input_dim, hidden_dim, task.num_outputs(), task.activation, dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Array2<f64>| {
            let (fan_in, fan_out) = m.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            m.mapv_inplace(|_| dist.sample(&mut rng));
        };
        fill(&mut head.w1);
        fill(&mut head.w2);
        Ok(head)
    }

    pub fn zeros(
        input_dim: usize,
        hidden_dim: usize,
        num_outputs: usize,
        activation: Activation,
        dropout_rate: f64,
    ) -> Result<Self, HeadError> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(HeadError::DropoutRate(dropout_rate));
        }
        Ok(HeadModel {
            input_dim,
            hidden_dim,
            num_outputs,
            dropout_rate,
            activation,
            w1: Array2::zeros((input_dim, hidden_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array2::zeros((hidden_dim, num_outputs)),
            b2: Array1::zeros(num_outputs),
        })
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), HeadError> {
        if params.len() != self.num_params() {
            return Err(HeadError::ParamLength { expected: self.num_params(), found: params.len() });
        }
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        fn copy<'a>(target: impl Iterator<Item = &'a mut f64>, source: &[f64]) {
            target.zip(source).for_each(|(t, &s)| *t = s);
        }
        copy(self.w1.iter_mut(), w1);
        copy(self.b1.iter_mut(), b1);
        copy(self.w2.iter_mut(), w2);
        copy(self.b2.iter_mut(), b2);
        Ok(())
    }

    pub fn snapshot(&self) -> HeadSnapshot {
        HeadSnapshot {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            num_outputs: self.num_outputs,
            dropout_rate: self.dropout_rate,
            activation: self.activation,
            params: self.params(),
        }
    }

    pub fn from_snapshot(snapshot: &HeadSnapshot) -> Result<Self, HeadError> {
        let mut head = Self::zeros(
            snapshot.input_dim,
            snapshot.hidden_dim,
            snapshot.num_outputs,
            snapshot.activation,
            snapshot.dropout_rate,
        )?;
        head.set_params(&snapshot.params)?;
        Ok(head)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<(), HeadError> {
        if x.ncols() != self.input_dim {
            return Err(HeadError::InputWidth { expected: self.input_dim, found: x.ncols() });
        }
        Ok(())
    }

    /// Inverted-dropout mask: each entry is 0 with probability `dropout_rate`
    /// and `1 / (1 - dropout_rate)` otherwise.
    pub fn dropout_mask<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        Array2::from_shape_simple_fn((rows, self.input_dim), || if rng.gen::<f64>() < keep { scale } else { 0.0 })
    }

    fn logits(&self, x: ArrayView2<'_, f64>, mask: Option<&Array2<f64>>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let dropped = match mask {
            Some(m) => &x * m,
            None => x.to_owned(),
        };
        let pre = dropped.dot(&self.w1) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        (dropped, pre, logits)
    }

    fn activate(&self, mut logits: Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Sigmoid => logits.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in logits.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("standard layout"));
                }
            }
        }
        logits
    }

    /// Output probabilities. Train mode draws a dropout mask from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Array2<f64>, HeadError> {
        self.check_input(x)?;
        let mask = match mode {
            Mode::Train => Some(self.dropout_mask(x.nrows(), rng)),
            Mode::Eval => None,
        };
        Ok(self.activate(self.logits(x, mask.as_ref()).2))
    }

    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, HeadError> {
        self.check_input(x)?;
        Ok(self.activate(self.logits(x, None).2))
    }

    /// Mean cross-entropy over the batch and its gradients. `mask` is the
    /// dropout mask to apply (None for an eval-mode pass).
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[usize],
        mask: Option<&Array2<f64>>,
    ) -> Result<(f64, HeadGrads), HeadError> {
        self.check_input(x)?;
        let rows = x.nrows();
        if targets.len() != rows {
            return Err(HeadError::TargetCount { rows, targets: targets.len() });
        }
        let classes = match self.activation {
            Activation::Sigmoid => 2,
            Activation::Softmax => self.num_outputs,
        };
        if let Some(&class) = targets.iter().find(|&&t| t >= classes) {
            return Err(HeadError::TargetRange { class, outputs: classes });
        }

        let (dropped, pre, logits) = self.logits(x, mask);
        let hidden = pre.mapv(|v| v.max(0.0));
        let n = rows.max(1) as f64;

        let mut loss = 0.0;
        let mut dlogits = Array2::zeros(logits.dim());
        for (i, &target) in targets.iter().enumerate() {
            let z = logits.row(i);
            match self.activation {
                Activation::Sigmoid => {
                    let z = z[0];
                    let y = target as f64;
                    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                    loss += softplus - y * z;
                    dlogits[[i, 0]] = (sigmoid(z) - y) / n;
                }
                Activation::Softmax => {
                    let mut p = z.to_vec();
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    loss += lse - z[target];
                    softmax_in_place(&mut p);
                    for (k, pk) in p.iter().enumerate() {
                        dlogits[[i, k]] = (pk - if k == target { 1.0 } else { 0.0 }) / n;
                    }
                }
            }
        }
        loss /= n;

        let w2 = hidden.t().dot(&dlogits);
        let b2 = dlogits.sum_axis(Axis(0));
        let mut dpre = dlogits.dot(&self.w2.t());
        dpre.zip_mut_with(&pre, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = dropped.t().dot(&dpre);
        let b1 = dpre.sum_axis(Axis(0));
        let mut input = dpre.dot(&self.w1.t());
        if let Some(m) = mask {
            input *= m;
        }
        Ok((loss, HeadGrads { w1, b1, w2, b2, input }))
    }
}

/// Class decision for one probability vector: threshold for subtask A
/// (positive iff `p >= t`), argmax with lowest-index ties otherwise.
pub fn decide_one(task: &TaskSpec, probabilities: &[f64]) -> usize {
    match task.decision {
        Decision::Threshold(t) => usize::from(probabilities[0] >= t),
        Decision::Argmax => argmax(probabilities),
    }
}

pub fn decide(task: &TaskSpec, probabilities: &[Vec<f64>]) -> Vec<usize> {
    probabilities.iter().map(|p| decide_one(task, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Taxonomy, TaskId};
    use ndarray::array;

    fn task(id: TaskId) -> TaskSpec {
        Taxonomy::builtin().task(id).unwrap()
    }

    #[test]
    fn zero_weights_uniform_softmax() {
        let head = HeadModel::zeros(3, 5, 4, Activation::Softmax, 0.5).unwrap();
        let p = head.forward_eval(array![[1.0, -2.0, 0.5]].view()).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn zero_weights_sigmoid_half() {
        let head = HeadModel::zeros(3, 5, 1, Activation::Sigmoid, 0.5).unwrap();
        let p = head.forward_eval(array![[1.0, -2.0, 0.5]].view()).unwrap();
        assert_eq!(p[[0, 0]], 0.5);
    }

    #[test]
    fn hand_computed_two_layer_softmax() {
        let mut head = HeadModel::zeros(2, 2, 2, Activation::Softmax, 0.5).unwrap();
        head.w1 = array![[1.0, -1.0], [0.5, 2.0]];
        head.b1 = array![0.1, -0.2];
        head.w2 = array![[1.0, 0.0], [-1.0, 0.5]];
        head.b2 = array![0.0, 0.3];
        // x = (1, 2): pre = (1 + 1 + 0.1, -1 + 4 - 0.2) = (2.1, 2.8), relu keeps both
        // logits = (2.1 - 2.8, 1.4 + 0.3) = (-0.7, 1.7)
        let p = head.forward_eval(array![[1.0, 2.0]].view()).unwrap();
        let e0 = (-0.7f64).exp();
        let e1 = 1.7f64.exp();
        assert!((p[[0, 0]] - e0 / (e0 + e1)).abs() < 1e-9);
        assert!((p[[0, 1]] - e1 / (e0 + e1)).abs() < 1e-9);
    }

    #[test]
    fn width_mismatch() {
        let head = HeadModel::zeros(3, 5, 1, Activation::Sigmoid, 0.5).unwrap();
        assert!(matches!(head.forward_eval(array![[1.0]].view()), Err(HeadError::InputWidth { .. })));
    }

    #[test]
    fn eval_is_deterministic_train_is_not() {
        let head = HeadModel::new(8, 16, &task(TaskId::B), 0.5, 3).unwrap();
        let x = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64 / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = head.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        let b = head.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        let c = head.forward(x.view(), Mode::Train, &mut rng).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn params_round_trip() {
        let head = HeadModel::new(3, 4, &task(TaskId::C), 0.5, 9).unwrap();
        let snap = head.snapshot();
        assert_eq!(HeadModel::from_snapshot(&snap).unwrap(), head);
        assert_eq!(head.num_params(), 3 * 4 + 4 + 4 * 11 + 11);
    }

    #[test]
    fn decision_rules() {
        let a = task(TaskId::A);
        assert_eq!(decide_one(&a, &[0.35]), 1);
        assert_eq!(decide_one(&a, &[0.349]), 0);
        let b = task(TaskId::B);
        assert_eq!(decide_one(&b, &[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(decide_one(&a.clone().with_threshold(0.5), &[0.4]), 0);
    }

    #[test]
    fn bad_dropout_rate() {
        assert!(HeadModel::zeros(1, 1, 1, Activation::Sigmoid, 1.0).is_err());
    }
}
