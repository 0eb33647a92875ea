//! Form classification: per-angle correctness bands fitted on correct reps,
//! and a small softmax MLP over angle features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pose::{angle_diff, wrap_degrees};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifierError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_loss})")]
    NonFiniteLoss { epoch: usize, last_loss: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Band strictness. Multiplies each angle's standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradeLevel {
    Professional,
    Standard,
    Beginner,
}

impl GradeLevel {
    pub const ALL: [GradeLevel; 3] = [GradeLevel::Professional, GradeLevel::Standard, GradeLevel::Beginner];

    pub fn multiplier(self) -> f64 {
        match self {
            GradeLevel::Professional => 0.5,
            GradeLevel::Standard => 1.0,
            GradeLevel::Beginner => 1.5,
        }
    }
}

/// Correct-pose prototype: circular mean and spread of each feature angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleBandModel {
    pub labels: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Tolerance slack for quantized features, in degrees.
    pub bin_width: f64,
}

/// Circular mean in `[0, 360)` and population standard deviation of the
/// wrapped deviations from it.
pub fn circular_stats(angles: &[f64]) -> (f64, f64) {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| {
        let r = a.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let mean = wrap_degrees(s.atan2(c).to_degrees());
    let var = angles.iter().map(|&a| angle_diff(a, mean).powi(2)).sum::<f64>() / angles.len() as f64;
    (mean, var.sqrt())
}

pub fn fit_bands(
    labels: &[String],
    correct_features: &[Vec<f64>],
    bin_width: f64,
) -> Result<AngleBandModel, ClassifierError> {
    if correct_features.len() < 2 {
        return Err(ClassifierError::InsufficientData(format!(
            "bands need at least 2 correct samples, got {}",
            correct_features.len()
        )));
    }
    let dim = labels.len();
    if let Some(bad) = correct_features.iter().find(|f| f.len() != dim) {
        return Err(ClassifierError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let (means, stds) = (0..dim)
        .map(|j| {
            let column: Vec<f64> = correct_features.iter().map(|f| f[j]).collect();
            circular_stats(&column)
        })
        .unzip();
    Ok(AngleBandModel {
        labels: labels.to_vec(),
        means,
        stds,
        bin_width,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub label: String,
    /// Feature minus band mean, in `[-180, 180)` degrees.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl AngleBandModel {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Signed deviation of each feature from its band mean.
    pub fn deviations(&self, feature: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if feature.len() != self.dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim(),
                got: feature.len(),
            });
        }
        Ok(feature.iter().zip(&self.means).map(|(&f, &m)| angle_diff(f, m)).collect())
    }

    /// Grades with an arbitrary band multiplier.
    pub fn grade_with(&self, feature: &[f64], multiplier: f64) -> Result<GradeResult, ClassifierError> {
        let deviations = self.deviations(feature)?;
        let violations: Vec<Violation> = deviations
            .iter()
            .enumerate()
            .filter(|&(j, d)| d.abs() > multiplier * self.stds[j] + self.bin_width)
            .map(|(j, &d)| Violation {
                label: self.labels[j].clone(),
                deviation: d,
            })
            .collect();
        Ok(GradeResult {
            pass: violations.is_empty(),
            violations,
        })
    }

    pub fn grade(&self, feature: &[f64], level: GradeLevel) -> Result<GradeResult, ClassifierError> {
        self.grade_with(feature, level.multiplier())
    }
}

/// Class-probability output for one rep, ordered (correct, mistake 1, mistake 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub probs: [f64; 3],
}

impl ClassPrediction {
    pub fn new(probs: [f64; 3]) -> Self {
        Self { probs }
    }

    /// Highest-probability class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for k in 1..3 {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn max_incorrect(&self) -> f64 {
        self.probs[1].max(self.probs[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 16,
        }
    }
}

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Negative log-likelihood, clamped away from `ln 0`; NaN propagates.
fn nll(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Multilayer perceptron: rectified hidden layers, softmax output,
/// cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// Inputs to each layer (after the previous layer's activation).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// He-initialized weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Self::zeros(sizes);
        for layer in &mut mlp.layers {
            let dist = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).expect("positive std");
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        mlp
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.layers.is_empty() {
            return Err(ClassifierError::InvalidModel("no layers".into()));
        }
        for (idx, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ClassifierError::InvalidModel(format!("layer {idx} has inconsistent shapes")));
            }
            if idx > 0 && self.layers[idx - 1].outputs != l.inputs {
                return Err(ClassifierError::InvalidModel(format!("layer {idx} does not chain")));
            }
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(&cur, &mut z);
            inputs.push(cur);
            cur = if idx == last { z.clone() } else { z.iter().map(|v| v.max(0.0)).collect() };
            pre.push(z);
        }
        let probs = softmax(&cur);
        Trace { inputs, pre, probs }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).probs
    }

    /// Mean cross-entropy over the samples.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| nll(self.forward(x)[y]))
            .sum();
        total / xs.len() as f64
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    /// Mean loss and its gradient with respect to [`Mlp::params`].
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, Vec<f64>) {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs))
            .collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let t = self.trace(x);
            loss += nll(t.probs[y]);
            // d loss / d logits for softmax + cross-entropy
            let mut delta: Vec<f64> = t.probs.clone();
            delta[y] -= 1.0;
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let g = &mut grads[li];
                let input = &t.inputs[li];
                for o in 0..layer.outputs {
                    g.bias[o] += delta[o];
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, v) in row.iter_mut().zip(input) {
                        *gw += delta[o] * v;
                    }
                }
                if li == 0 {
                    break;
                }
                let prev_pre = &t.pre[li - 1];
                let mut next = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (acc, w) in next.iter_mut().zip(row) {
                        *acc += d * w;
                    }
                }
                for (acc, z) in next.iter_mut().zip(prev_pre) {
                    if *z <= 0.0 {
                        *acc = 0.0;
                    }
                }
                delta = next;
            }
        }
        let n = xs.len() as f64;
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            flat.extend(g.weights.iter().map(|v| v / n));
            flat.extend(g.bias.iter().map(|v| v / n));
        }
        (loss / n, flat)
    }
}

/// Per-feature affine standardization applied before the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on the rows; constant columns keep unit scale.
    pub fn fit(xs: &[Vec<f64>]) -> Self {
        let dim = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in std.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = std
            .into_iter()
            .map(|s| {
                let s = (s / n).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Trained classifier: scaler plus network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub scaler: InputScaler,
    pub net: Mlp,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassPrediction, ClassifierError> {
        if x.len() != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let p = self.net.forward(&self.scaler.apply(x));
        Ok(ClassPrediction::new([p[0], p[1], p[2]]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Full training-set loss after each epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

pub const MIN_SAMPLES_PER_CLASS: usize = 10;

/// Trains a `[m, hidden, 3]` network with momentum SGD on shuffled
/// mini-batches. Bit-reproducible for a fixed seed and input order.
pub fn train_mlp(
    xs: &[Vec<f64>],
    ys: &[usize],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(MlpModel, TrainingReport), ClassifierError> {
    if xs.len() != ys.len() {
        return Err(ClassifierError::InsufficientData(format!(
            "{} feature rows but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y > 2) {
        return Err(ClassifierError::InsufficientData(format!("label {bad} outside 0..=2")));
    }
    let mut per_class = [0usize; 3];
    for &y in ys {
        per_class[y] += 1;
    }
    if per_class.iter().any(|&c| c < MIN_SAMPLES_PER_CLASS) {
        return Err(ClassifierError::InsufficientData(format!(
            "need {MIN_SAMPLES_PER_CLASS} samples per class, have {per_class:?}"
        )));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(ClassifierError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if hp.batch_size == 0 || hp.hidden == 0 {
        return Err(ClassifierError::InvalidModel("batch_size and hidden must be > 0".into()));
    }

    let scaler = InputScaler::fit(xs);
    let inputs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(&[dim, hp.hidden, 3], &mut rng);
    let mut params = net.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(hp.epochs);
    let mut last_loss = f64::NAN;

    let mut bx: Vec<Vec<f64>> = Vec::with_capacity(hp.batch_size);
    let mut by: Vec<usize> = Vec::with_capacity(hp.batch_size);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(inputs[i].clone());
                by.push(ys[i]);
            }
            let (_, grad) = net.loss_and_gradient(&bx, &by);
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = hp.momentum * *v - hp.learning_rate * g;
                *p += *v;
            }
            net.set_params(&params);
        }
        let loss = net.loss(&inputs, ys);
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch, last_loss });
        }
        last_loss = loss;
        epoch_loss.push(loss);
    }

    let model = MlpModel { scaler, net };
    let correct = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| model.predict(x).map(|p| p.argmax() == y).unwrap_or(false))
        .count();
    let report = TrainingReport {
        seed,
        hyperparams: hp.clone(),
        epoch_loss,
        train_accuracy: correct as f64 / xs.len() as f64,
    };
    Ok((model, report))
}
