//! A small feedforward classifier (tanh hidden layer, softmax output) that
//! assigns Euler solutions to structural-index classes.
//!
//! Training is full-batch and single-threaded so a fixed seed reproduces the
//! weights bit for bit. Two optimisers are offered: scaled conjugate gradient
//! (Møller) and gradient descent with momentum and step rejection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::euler::SolutionSet;
use crate::geodata::Grid;
use crate::rng::sub_seed;

pub const N_FEATURES: usize = 6;
pub const N_HIDDEN: usize = 100;

pub const FEATURE_NAMES: [&str; N_FEATURES] = ["x0_norm", "y0_norm", "z0", "rms", "abs_base", "horizontal_gradient"];

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("solution set is empty")]
    EmptySolutionSet,
    #[error("gradient grids do not match the sweep georeference")]
    GeorefMismatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("structural index {0} is not in the configured set")]
    UnknownIndex(f64),
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite feature in row {0}")]
    NonFinite(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

/// Row-major `n × n_features` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_features: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_features: usize, data: Vec<f64>) -> Result<Self> {
        if n_features == 0 || data.len() % n_features != 0 {
            return Err(ClassifierError::ShapeMismatch { expected: n_features, got: data.len() });
        }
        Ok(Self { n_features, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n_features: self.n_features, data }
    }
}

/// Features and SI-class labels for every solution in the set.
///
/// Position is normalised to the grid extent; the gradient magnitude is read
/// at the window centre.
pub fn build_features(set: &SolutionSet, tx: &Grid, ty: &Grid) -> Result<(FeatureMatrix, Vec<usize>)> {
    if set.is_empty() {
        return Err(ClassifierError::EmptySolutionSet);
    }
    if tx.georef != ty.georef || set.provenance.georef.is_some_and(|g| g != tx.georef) {
        return Err(ClassifierError::GeorefMismatch);
    }
    let g = tx.georef;
    let width = g.n_cols as f64 * g.cell_size;
    let height = g.n_rows as f64 * g.cell_size;
    let si_set = &set.provenance.config.si_set;
    let mut data = Vec::with_capacity(set.len() * N_FEATURES);
    let mut labels = Vec::with_capacity(set.len());
    for s in &set.solutions {
        if s.window_row >= g.n_rows || s.window_col >= g.n_cols {
            return Err(ClassifierError::GeorefMismatch);
        }
        let label = si_set.iter().position(|&v| v == s.si).ok_or(ClassifierError::UnknownIndex(s.si))?;
        let gx = tx.get(s.window_row, s.window_col);
        let gy = ty.get(s.window_row, s.window_col);
        data.extend_from_slice(&[
            (s.x0 - g.x_origin) / width,
            (s.y0 - g.y_origin) / height,
            s.z0,
            s.rms,
            s.base.abs(),
            gx.hypot(gy),
        ]);
        labels.push(label);
    }
    Ok((FeatureMatrix { n_features: N_FEATURES, data }, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    ScaledConjugateGradient,
    GradientDescentMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    /// Training stops once an accepted step lowers the loss by less than this.
    pub tolerance: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::ScaledConjugateGradient,
            max_epochs: 500,
            tolerance: 1e-9,
            seed: 0,
            validation_fraction: 0.2,
            hidden: N_HIDDEN,
            learning_rate: 0.1,
            momentum: 0.9,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
    /// `n_hidden × n_inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n_outputs × n_hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Columns that were constant at training time (their stddev was set to 1).
    pub degenerate_features: Vec<bool>,
    /// Structural index of each output class.
    pub si_set: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity normalisation.
    pub fn new(n_inputs: usize, n_hidden: usize, n_outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "mlp-init"));
        let mut draw = |fan_in: usize, fan_out: usize, count: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..count).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = draw(n_inputs, n_hidden, n_hidden * n_inputs);
        let w2 = draw(n_hidden, n_outputs, n_outputs * n_hidden);
        Self {
            n_inputs,
            n_hidden,
            n_outputs,
            w1,
            b1: vec![0.0; n_hidden],
            w2,
            b2: vec![0.0; n_outputs],
            feature_mean: vec![0.0; n_inputs],
            feature_std: vec![1.0; n_inputs],
            degenerate_features: vec![false; n_inputs],
            si_set: (1..=n_outputs).map(|k| k as f64 * 0.5).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let (a, rest) = theta.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn is_valid(&self) -> bool {
        self.w1.len() == self.n_hidden * self.n_inputs
            && self.w2.len() == self.n_outputs * self.n_hidden
            && self.b1.len() == self.n_hidden
            && self.b2.len() == self.n_outputs
            && self.feature_mean.len() == self.n_inputs
            && self.feature_std.len() == self.n_inputs
            && self.params().iter().all(|v| v.is_finite())
            && self.feature_std.iter().all(|s| *s > 0.0)
    }

    fn normalize(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.n_features != self.n_inputs {
            return Err(ClassifierError::ShapeMismatch { expected: self.n_inputs, got: features.n_features });
        }
        let data = features
            .data
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let j = k % self.n_inputs;
                (v - self.feature_mean[j]) / self.feature_std[j]
            })
            .collect();
        Ok(FeatureMatrix { n_features: self.n_inputs, data })
    }

    fn hidden(&self, theta: &[f64], x: &[f64], h: &mut [f64]) {
        let ni = self.n_inputs;
        let b1 = &theta[self.n_hidden * ni..];
        for j in 0..self.n_hidden {
            let w = &theta[j * ni..(j + 1) * ni];
            let a: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b1[j];
            h[j] = a.tanh();
        }
    }

    fn logits(&self, theta: &[f64], h: &[f64], z: &mut [f64]) {
        let nh = self.n_hidden;
        let off = nh * self.n_inputs + nh;
        let w2 = &theta[off..off + self.n_outputs * nh];
        let b2 = &theta[off + self.n_outputs * nh..];
        for k in 0..self.n_outputs {
            z[k] = w2[k * nh..(k + 1) * nh].iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + b2[k];
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Cross-entropy of one sample from its logits, `log Σ exp(z) − z_y`.
fn sample_loss(z: &[f64], label: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + s.ln() - z[label]
}

/// Summed cross-entropy over a normalised batch.
fn batch_loss(model: &MlpModel, theta: &[f64], x: &FeatureMatrix, labels: &[usize]) -> f64 {
    let mut h = vec![0.0; model.n_hidden];
    let mut z = vec![0.0; model.n_outputs];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        model.hidden(theta, x.row(i), &mut h);
        model.logits(theta, &h, &mut z);
        total += sample_loss(&z, y);
    }
    total
}

/// Summed cross-entropy and its gradient over a normalised batch.
fn batch_gradient(model: &MlpModel, theta: &[f64], x: &FeatureMatrix, labels: &[usize]) -> (f64, Vec<f64>) {
    let (ni, nh, no) = (model.n_inputs, model.n_hidden, model.n_outputs);
    let off_b1 = nh * ni;
    let off_w2 = off_b1 + nh;
    let off_b2 = off_w2 + no * nh;
    let mut grad = vec![0.0; theta.len()];
    let mut h = vec![0.0; nh];
    let mut z = vec![0.0; no];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let xi = x.row(i);
        model.hidden(theta, xi, &mut h);
        model.logits(theta, &h, &mut z);
        total += sample_loss(&z, y);
        let mut dz = softmax(&z);
        dz[y] -= 1.0;
        for k in 0..no {
            for j in 0..nh {
                grad[off_w2 + k * nh + j] += dz[k] * h[j];
            }
            grad[off_b2 + k] += dz[k];
        }
        for j in 0..nh {
            let dh: f64 = (0..no).map(|k| theta[off_w2 + k * nh + j] * dz[k]).sum();
            let da = dh * (1.0 - h[j] * h[j]);
            for m in 0..ni {
                grad[j * ni + m] += da * xi[m];
            }
            grad[off_b1 + j] += da;
        }
    }
    (total, grad)
}

/// Class probabilities for raw (unnormalised) feature rows.
pub fn predict(model: &MlpModel, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    let x = model.normalize(features)?;
    let theta = model.params();
    Ok((0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut h = vec![0.0; model.n_hidden];
            let mut z = vec![0.0; model.n_outputs];
            model.hidden(&theta, x.row(i), &mut h);
            model.logits(&theta, &h, &mut z);
            softmax(&z)
        })
        .collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict_classes(model: &MlpModel, features: &FeatureMatrix) -> Result<Vec<usize>> {
    Ok(predict(model, features)?.iter().map(|r| argmax(r)).collect())
}

/// Backpropagated gradient of the summed loss on raw feature rows.
pub fn loss_gradient(model: &MlpModel, features: &FeatureMatrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_labels(labels, model.n_outputs)?;
    let x = model.normalize(features)?;
    Ok(batch_gradient(model, &model.params(), &x, labels))
}

/// Maximum over all parameters of `|g_bp − g_fd| / max(|g_bp| + |g_fd|, 1e-8)`
/// with central differences at `h = 1e-6`.
pub fn gradient_check(model: &MlpModel, features: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, model.n_outputs)?;
    let x = model.normalize(features)?;
    let theta = model.params();
    let (_, g) = batch_gradient(model, &theta, &x, labels);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut t = theta.clone();
    for p in 0..theta.len() {
        t[p] = theta[p] + step;
        let plus = per_sample_losses(model, &t, &x, labels);
        t[p] = theta[p] - step;
        let minus = per_sample_losses(model, &t, &x, labels);
        t[p] = theta[p];
        let diff: f64 = plus.iter().zip(&minus).map(|(a, b)| a - b).sum();
        let fd = diff / (2.0 * step);
        let err = (g[p] - fd).abs() / (g[p].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn per_sample_losses(model: &MlpModel, theta: &[f64], x: &FeatureMatrix, labels: &[usize]) -> Vec<f64> {
    let mut h = vec![0.0; model.n_hidden];
    let mut z = vec![0.0; model.n_outputs];
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            model.hidden(theta, x.row(i), &mut h);
            model.logits(theta, &h, &mut z);
            sample_loss(&z, y)
        })
        .collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(ClassifierError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub validation_accuracy: f64,
    pub degenerate_features: Vec<bool>,
}

/// Per-class shuffle, then the first `round(fraction · count)` of each class
/// go to validation (at least one when the class has two or more members).
pub fn stratified_split(labels: &[usize], validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "split"));
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut k = (validation_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            k = k.clamp(1, idx.len() - 1);
        } else {
            k = 0;
        }
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a `n_features → hidden → n_classes` model.
pub fn train_mlp(
    features: &FeatureMatrix,
    labels: &[usize],
    si_set: &[f64],
    config: &TrainingConfig,
) -> Result<(MlpModel, TrainingReport)> {
    config.validate()?;
    let n_classes = si_set.len();
    check_labels(labels, n_classes)?;
    if features.n_rows() != labels.len() {
        return Err(ClassifierError::ShapeMismatch { expected: labels.len(), got: features.n_rows() });
    }
    if labels.len() < 2 * n_classes {
        return Err(ClassifierError::TooFewSamples { needed: 2 * n_classes, got: labels.len() });
    }
    if let Some(i) = (0..features.n_rows()).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
        return Err(ClassifierError::NonFinite(i));
    }
    let (train_idx, val_idx) = stratified_split(labels, config.validation_fraction, config.seed);
    let xtr_raw = features.select(&train_idx);
    let ytr: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let xva_raw = features.select(&val_idx);
    let yva: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let nf = features.n_features;
    let mut model = MlpModel::new(nf, config.hidden, n_classes, config.seed);
    model.si_set = si_set.to_vec();
    let ntr = train_idx.len() as f64;
    for j in 0..nf {
        let col: Vec<f64> = (0..xtr_raw.n_rows()).map(|i| xtr_raw.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / ntr;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ntr;
        let sd = var.sqrt();
        model.feature_mean[j] = mean;
        if sd > 0.0 && sd.is_finite() {
            model.feature_std[j] = sd;
        } else {
            model.feature_std[j] = 1.0;
            model.degenerate_features[j] = true;
        }
    }
    let xtr = model.normalize(&xtr_raw)?;
    let xva = model.normalize(&xva_raw)?;
    let nva = (yva.len() as f64).max(1.0);

    let objective = |m: &MlpModel, th: &[f64]| batch_loss(m, th, &xtr, &ytr) / ntr;
    let gradient = |m: &MlpModel, th: &[f64]| {
        let (l, mut g) = batch_gradient(m, th, &xtr, &ytr);
        g.iter_mut().for_each(|v| *v /= ntr);
        (l / ntr, g)
    };
    let val_loss = |m: &MlpModel, th: &[f64]| batch_loss(m, th, &xva, &yva) / nva;

    let mut theta = model.params();
    let mut history = Vec::new();
    match config.optimizer {
        Optimizer::GradientDescentMomentum => {
            let mut lr = config.learning_rate;
            let mut velocity = vec![0.0; theta.len()];
            let (mut loss, mut grad) = gradient(&model, &theta);
            for epoch in 1..=config.max_epochs {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(&grad)
                    .zip(&mut velocity)
                    .map(|((t, g), v)| {
                        *v = config.momentum * *v - lr * g;
                        t + *v
                    })
                    .collect();
                let (trial_loss, trial_grad) = gradient(&model, &trial);
                let accepted = trial_loss <= loss;
                let improvement = loss - trial_loss;
                if accepted {
                    theta = trial;
                    loss = trial_loss;
                    grad = trial_grad;
                } else {
                    lr *= 0.5;
                    velocity.iter_mut().for_each(|v| *v = 0.0);
                }
                history.push(EpochRecord { epoch, train_loss: loss, validation_loss: val_loss(&model, &theta) });
                if accepted && improvement < config.tolerance {
                    break;
                }
            }
        }
        Optimizer::ScaledConjugateGradient => {
            scg(&model, &mut theta, config, &objective, &gradient, |epoch, loss, th| {
                history.push(EpochRecord { epoch, train_loss: loss, validation_loss: val_loss(&model, th) });
            });
        }
    }
    model.set_params(&theta);

    let validation_accuracy = if yva.is_empty() {
        f64::NAN
    } else {
        let pred = predict_classes(&model, &xva_raw)?;
        pred.iter().zip(&yva).filter(|(p, y)| p == y).count() as f64 / yva.len() as f64
    };
    let report = TrainingReport {
        history,
        train_indices: train_idx,
        validation_indices: val_idx,
        validation_accuracy,
        degenerate_features: model.degenerate_features.clone(),
    };
    Ok((model, report))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Møller's scaled conjugate gradient; one iteration per epoch.
fn scg(
    model: &MlpModel,
    w: &mut Vec<f64>,
    config: &TrainingConfig,
    objective: &dyn Fn(&MlpModel, &[f64]) -> f64,
    gradient: &dyn Fn(&MlpModel, &[f64]) -> (f64, Vec<f64>),
    mut record: impl FnMut(usize, f64, &[f64]),
) {
    let n = w.len();
    let sigma0 = 1e-4;
    let mut lambda = 1e-6;
    let mut lambda_bar = 0.0;
    let (mut loss, g) = gradient(model, w);
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut success = true;
    let mut s = vec![0.0; n];
    let mut delta = 0.0;
    let mut since_restart = 0usize;
    for epoch in 1..=config.max_epochs {
        let p2 = dot(&p, &p);
        if p2 == 0.0 {
            record(epoch, loss, w);
            break;
        }
        if success {
            let sigma = sigma0 / p2.sqrt();
            let probe: Vec<f64> = w.iter().zip(&p).map(|(w, p)| w + sigma * p).collect();
            let (_, gp) = gradient(model, &probe);
            s = gp.iter().zip(&r).map(|(gp, r)| (gp + r) / sigma).collect();
            delta = dot(&p, &s);
        }
        let shift = lambda - lambda_bar;
        s.iter_mut().zip(&p).for_each(|(s, p)| *s += shift * p);
        delta += shift * p2;
        if delta <= 0.0 {
            let bump = lambda - 2.0 * delta / p2;
            s.iter_mut().zip(&p).for_each(|(s, p)| *s += bump * p);
            lambda_bar = 2.0 * (lambda - delta / p2);
            delta = -delta + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dot(&p, &r);
        let alpha = mu / delta;
        let trial: Vec<f64> = w.iter().zip(&p).map(|(w, p)| w + alpha * p).collect();
        let trial_loss = objective(model, &trial);
        let comparison = 2.0 * delta * (loss - trial_loss) / (mu * mu);
        let mut improvement = None;
        if comparison >= 0.0 && trial_loss <= loss {
            improvement = Some(loss - trial_loss);
            *w = trial;
            let (l, g) = gradient(model, w);
            loss = l;
            let r_new: Vec<f64> = g.iter().map(|v| -v).collect();
            lambda_bar = 0.0;
            success = true;
            since_restart += 1;
            if since_restart >= n {
                p = r_new.clone();
                since_restart = 0;
            } else {
                let beta = (dot(&r_new, &r_new) - dot(&r_new, &r)) / mu;
                p = r_new.iter().zip(&p).map(|(r, p)| r + beta * p).collect();
            }
            r = r_new;
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }
        if comparison < 0.25 {
            lambda += delta * (1.0 - comparison) / p2;
        }
        lambda = lambda.clamp(1e-15, 1e100);
        record(epoch, loss, w);
        if improvement.is_some_and(|d| d < config.tolerance) || dot(&r, &r) == 0.0 {
            break;
        }
    }
}

/// `matrix[actual][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], actual: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p < classes && a < classes {
            m[a][p] += 1;
        }
    }
    m
}

pub fn write_confusion_csv<W: Write>(matrix: &[Vec<usize>], si_set: &[f64], mut sink: W) -> std::io::Result<()> {
    let head: Vec<String> = si_set.iter().map(|s| format!("pred_{s}")).collect();
    writeln!(sink, "actual,{}", head.join(","))?;
    for (row, si) in matrix.iter().zip(si_set) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(sink, "{si},{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix, Vec<usize>) {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..6 {
            for k in 0..4 {
                let mut row = [0.0; 6];
                row[c] = 10.0 + k as f64 * 0.1;
                row[(c + 1) % 6] = 0.5 * k as f64;
                data.extend_from_slice(&row);
                labels.push(c);
            }
        }
        (FeatureMatrix::new(6, data).unwrap(), labels)
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut m = MlpModel::new(6, 10, 6, 3);
        m.w2.iter_mut().for_each(|w| *w = 0.0);
        let p = predict(&m, &FeatureMatrix::new(6, vec![1.0, -2.0, 3.0, 0.0, 5.0, 9.0]).unwrap()).unwrap();
        for v in &p[0] {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn small_model_gradient_matches() {
        let (x, y) = toy();
        let m = MlpModel::new(6, 5, 6, 11);
        assert!(gradient_check(&m, &x, &y).unwrap() <= 1e-5);
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let m = MlpModel::new(6, 5, 6, 2);
        let one = FeatureMatrix::new(6, vec![0.3, -1.0, 2.0, 0.1, 0.0, 4.0]).unwrap();
        let two = FeatureMatrix::new(6, [one.data.clone(), one.data.clone()].concat()).unwrap();
        let (_, g1) = loss_gradient(&m, &one, &[2]).unwrap();
        let (_, g2) = loss_gradient(&m, &two, &[2, 2]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let (x, mut y) = toy();
        y[0] = 6;
        let si = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        assert!(matches!(
            train_mlp(&x, &y, &si, &TrainingConfig::default()),
            Err(ClassifierError::LabelOutOfRange { .. })
        ));
        let m = MlpModel::new(6, 5, 6, 0);
        assert!(matches!(
            predict(&m, &FeatureMatrix::new(3, vec![0.0; 3]).unwrap()),
            Err(ClassifierError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stratified_split_keeps_every_class() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let (tr, va) = stratified_split(&labels, 0.2, 9);
        assert_eq!(tr.len() + va.len(), 60);
        for c in 0..6 {
            assert_eq!(va.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
    }

    #[test]
    fn toy_problem_trains_both_ways() {
        let (x, y) = toy();
        let si = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        for optimizer in [Optimizer::ScaledConjugateGradient, Optimizer::GradientDescentMomentum] {
            let cfg = TrainingConfig { optimizer, max_epochs: 200, hidden: 12, ..Default::default() };
            let (m, report) = train_mlp(&x, &y, &si, &cfg).unwrap();
            assert!(m.is_valid());
            let first = report.history.first().unwrap().train_loss;
            let last = report.history.last().unwrap().train_loss;
            assert!(last < first);
            let correct = predict_classes(&m, &x).unwrap().iter().zip(&y).filter(|(p, y)| p == y).count();
            assert!(correct >= 22, "{optimizer:?}: {correct}");
        }
    }
}
