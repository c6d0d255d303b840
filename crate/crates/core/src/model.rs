//! Softmax classifier over mean-pooled embeddings, trained jointly with the
//! embedding table by plain mini-batch SGD.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::encoder::{encode, EmbeddingTable};
use crate::seed;

/// Smallest probability fed to the log in [`loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: classifier expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty sample list")]
    EmptySamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    classes: usize,
    dim: usize,
    /// `classes × dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    /// Weights uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`, zero bias.
    pub fn random(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        let weights = (0..classes * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            classes,
            dim,
            weights,
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weights.len(), classes * dim);
        assert_eq!(bias.len(), classes);
        Self {
            classes,
            dim,
            weights,
            bias,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn logits(&self, vector: &[f64]) -> Result<Vec<f64>, ModelError> {
        if vector.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        Ok((0..self.classes)
            .map(|c| {
                self.row(c)
                    .iter()
                    .zip(vector)
                    .fold(self.bias[c], |acc, (w, x)| acc + w * x)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// L2 strength on classifier weights; the penalty is `l2/2 · ‖W‖²`.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 256,
            epochs: 15,
            seed: 0,
            l2: 1e-5,
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn forward(vector: &[f64], clf: &LinearClassifier) -> Result<Vec<f64>, ModelError> {
    Ok(softmax(&clf.logits(vector)?))
}

/// Cross-entropy of one prediction.
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(sample: &Sample, table: &EmbeddingTable, clf: &LinearClassifier) -> usize {
    let v = encode(sample, table);
    argmax(&clf.logits(&v.values).expect("table and classifier dims agree"))
}

/// Gradients of the batch objective. Table gradients are sparse, keyed by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub table: BTreeMap<u32, Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_batch(
    batch: &[&Sample],
    table: &EmbeddingTable,
    clf: &LinearClassifier,
) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if table.dim() != clf.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: clf.dim(),
            found: table.dim(),
        });
    }
    if let Some(s) = batch.iter().find(|s| s.label_id >= clf.classes()) {
        return Err(ModelError::InvalidLabel {
            label: s.label_id,
            classes: clf.classes(),
        });
    }
    Ok(())
}

/// Mean cross-entropy over the batch plus `l2/2 · ‖W‖²`.
pub fn batch_objective(
    batch: &[&Sample],
    table: &EmbeddingTable,
    clf: &LinearClassifier,
    l2: f64,
) -> Result<f64, ModelError> {
    check_batch(batch, table, clf)?;
    let mut total = 0.0;
    for s in batch {
        let p = forward(&encode(s, table).values, clf)?;
        total += loss(&p, s.label_id);
    }
    let penalty: f64 = clf.weights.iter().map(|w| w * w).sum::<f64>() * l2 / 2.0;
    Ok(total / batch.len() as f64 + penalty)
}

/// Analytic gradient of [`batch_objective`], together with the batch mean
/// cross-entropy (without the penalty).
///
/// Samples are processed in batch order and tokens in sequence order, so the
/// accumulation is deterministic.
pub fn batch_gradients(
    batch: &[&Sample],
    table: &EmbeddingTable,
    clf: &LinearClassifier,
    l2: f64,
) -> Result<(Gradients, f64), ModelError> {
    check_batch(batch, table, clf)?;
    let (classes, dim) = (clf.classes(), clf.dim());
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients {
        table: BTreeMap::new(),
        weights: vec![0.0; classes * dim],
        bias: vec![0.0; classes],
    };
    let mut total_loss = 0.0;
    let mut dz = vec![0.0; classes];
    let mut dv = vec![0.0; dim];

    for s in batch {
        let v = encode(s, table);
        let p = forward(&v.values, clf)?;
        total_loss += loss(&p, s.label_id);

        for (c, d) in dz.iter_mut().enumerate() {
            let target = if c == s.label_id { 1.0 } else { 0.0 };
            *d = (p[c] - target) * scale;
        }
        for (c, &dzc) in dz.iter().enumerate() {
            grads.bias[c] += dzc;
            let row = &mut grads.weights[c * dim..(c + 1) * dim];
            for (g, x) in row.iter_mut().zip(&v.values) {
                *g += dzc * x;
            }
        }
        if v.degenerate {
            continue;
        }
        dv.iter_mut().for_each(|x| *x = 0.0);
        for (c, &dzc) in dz.iter().enumerate() {
            for (d, w) in dv.iter_mut().zip(clf.row(c)) {
                *d += dzc * w;
            }
        }
        let share = 1.0 / s.tokens.len() as f64;
        for &tok in &s.tokens {
            let row = grads
                .table
                .entry(table.resolve(tok))
                .or_insert_with(|| vec![0.0; dim]);
            for (g, d) in row.iter_mut().zip(&dv) {
                *g += d * share;
            }
        }
    }
    for (g, w) in grads.weights.iter_mut().zip(&clf.weights) {
        *g += l2 * w;
    }
    Ok((grads, total_loss * scale))
}

/// One SGD update on `batch`. Returns the batch mean cross-entropy measured
/// before the update.
pub fn grad_step(
    batch: &[&Sample],
    table: &mut EmbeddingTable,
    clf: &mut LinearClassifier,
    cfg: &TrainConfig,
) -> Result<f64, ModelError> {
    let (grads, mean_loss) = batch_gradients(batch, table, clf, cfg.l2)?;
    let lr = cfg.learning_rate;
    for (w, g) in clf.weights.iter_mut().zip(&grads.weights) {
        *w -= lr * g;
    }
    for (b, g) in clf.bias.iter_mut().zip(&grads.bias) {
        *b -= lr * g;
    }
    for (&row, g) in &grads.table {
        for (x, d) in table.row_mut(row).iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
    Ok(mean_loss)
}

/// Shuffles `samples` with `epoch_seed`, then runs [`grad_step`] over
/// consecutive batches (the last one may be short). Returns the
/// sample-weighted mean loss.
pub fn train_epoch(
    samples: &[&Sample],
    table: &mut EmbeddingTable,
    clf: &mut LinearClassifier,
    cfg: &TrainConfig,
    epoch_seed: u64,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptySamples);
    }
    let mut order: Vec<&Sample> = samples.to_vec();
    order.shuffle(&mut seed::rng(epoch_seed));
    let mut weighted = 0.0;
    for batch in order.chunks(cfg.batch_size.max(1)) {
        weighted += grad_step(batch, table, clf, cfg)? * batch.len() as f64;
    }
    Ok(weighted / samples.len() as f64)
}
