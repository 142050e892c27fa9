//! Mini-batch SGD on softmax cross-entropy plus FC-weight L2, and patch-level
//! evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PatchDataset;
use crate::error::{invalid, Error, Result};
use crate::grade::{QualityGrade, NUM_GRADES};
use crate::network::{DeepQualityNet, Gradients, PatchScore};
use crate::nn::{l2_penalty, sgd_step, softmax_cross_entropy, Tensor};
use crate::scalar::Real;

/// Samples per work unit. Fixed so that gradient sums associate the same way
/// whatever the worker count.
pub const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `lr_decay_every` epochs; 0 disables decay.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub l2_lambda: f64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-2,
            lr_decay: 0.5,
            lr_decay_every: 30,
            l2_lambda: 1e-4,
            momentum: 0.0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(invalid!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    /// Step size during zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            0 => self.learning_rate,
            every => self.learning_rate * self.lr_decay.powi((epoch / every) as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over the epoch's samples of the batch objective.
    pub train_loss: f64,
    /// Accuracy of the predictions made while the epoch was running.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

/// Objective value, gradient and per-sample predictions for one batch.
pub struct BatchLoss<T: Real> {
    pub loss: T,
    pub grads: Gradients<T>,
    pub predictions: Vec<QualityGrade>,
}

/// Mean cross-entropy over the batch plus `l2_lambda · Σ w²` over the FC
/// weights, with gradients for every parameter.
pub fn total_loss<T: Real>(
    net: &DeepQualityNet<T>,
    patches: &[&Tensor<T>],
    labels: &[usize],
    l2_lambda: T,
) -> Result<BatchLoss<T>> {
    if patches.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if patches.len() != labels.len() {
        return Err(invalid!("{} patches but {} labels", patches.len(), labels.len()));
    }
    let partials: Vec<(Gradients<T>, Vec<(T, QualityGrade)>)> = patches
        .par_chunks(CHUNK)
        .zip(labels.par_chunks(CHUNK))
        .map(|(p, l)| {
            let mut g = net.zeros_like();
            let out = net.accumulate_batch(p, l, &mut g)?;
            Ok((g, out))
        })
        .collect::<Result<_>>()?;

    let mut partials = partials.into_iter();
    let (mut grads, first) = partials.next().expect("batch is non-empty");
    let mut data_loss = T::zero();
    let mut predictions = Vec::with_capacity(patches.len());
    for (loss, grade) in first {
        data_loss += loss;
        predictions.push(grade);
    }
    for (g, out) in partials {
        grads.axpy(T::one(), &g)?;
        for (loss, grade) in out {
            data_loss += loss;
            predictions.push(grade);
        }
    }

    let inv_n = T::one() / T::from_usize(patches.len()).expect("batch size fits the scalar type");
    grads.scale(inv_n);
    let (penalty, pg) = l2_penalty(&[&net.fc1, &net.fc2], l2_lambda)?;
    grads.fc1.weights.axpy(T::one(), &pg[0])?;
    grads.fc2.weights.axpy(T::one(), &pg[1])?;
    Ok(BatchLoss {
        loss: data_loss * inv_n + penalty,
        grads,
        predictions,
    })
}

/// Objective value alone; forward passes only.
pub fn batch_objective<T: Real>(
    net: &DeepQualityNet<T>,
    patches: &[&Tensor<T>],
    labels: &[usize],
    l2_lambda: T,
) -> Result<T> {
    if patches.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let mut data_loss = T::zero();
    for (p, &l) in patches.iter().zip(labels) {
        data_loss += softmax_cross_entropy(&net.forward(p)?, l)?.0;
    }
    let (penalty, _) = l2_penalty(&[&net.fc1, &net.fc2], l2_lambda)?;
    Ok(data_loss / T::from_usize(patches.len()).expect("batch size fits") + penalty)
}

/// Where and why training stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainAbort {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

pub struct TrainOutcome<T: Real> {
    /// Parameters after the last completed step (the last good state if aborted).
    pub final_net: DeepQualityNet<T>,
    pub best_net: DeepQualityNet<T>,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub metrics: Vec<EpochMetrics>,
    pub aborted: Option<TrainAbort>,
}

fn to_t<T: Real>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// Runs `config.epochs` epochs of shuffled mini-batch SGD, calling
/// `on_epoch` after each one.
pub fn train<T: Real>(
    net: DeepQualityNet<T>,
    train_set: &PatchDataset<T>,
    test_set: &PatchDataset<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(invalid!(
            "training needs non-empty train and test sets (got {} and {})",
            train_set.len(),
            test_set.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut net = net;
    let mut velocity = (config.momentum > 0.0).then(|| net.zeros_like());
    let l2 = to_t::<T>(config.l2_lambda);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best: Option<(DeepQualityNet<T>, usize, f64)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = to_t::<T>(config.learning_rate_at(epoch));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let patches: Vec<&Tensor<T>> = idx.iter().map(|&i| &train_set.samples[i].patch).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.samples[i].grade.index()).collect();
            let abort = |message: String| TrainAbort {
                epoch: epoch + 1,
                batch: b,
                message,
            };
            let batch = match total_loss(&net, &patches, &labels, l2) {
                Ok(b) if b.loss.is_finite() && b.grads.is_finite() => b,
                Ok(b) => return Ok(finish(net, best, metrics, Some(abort(format!("non-finite loss {}", b.loss))))),
                Err(Error::NonFinite(what)) => {
                    return Ok(finish(net, best, metrics, Some(abort(format!("non-finite {what}")))));
                }
                Err(e) => return Err(e),
            };
            let before = net.clone();
            let step = match velocity.as_mut() {
                Some(v) => {
                    v.scale(to_t(config.momentum));
                    v.axpy(T::one(), &batch.grads)?;
                    v
                }
                None => &batch.grads,
            };
            sgd_step(&mut net.params_mut(), &step.params(), lr)?;
            if !net.is_finite() {
                return Ok(finish(before, best, metrics, Some(abort("parameters became non-finite".into()))));
            }
            loss_sum += batch.loss.to_f64_lossy() * idx.len() as f64;
            correct += batch
                .predictions
                .iter()
                .zip(&labels)
                .filter(|(p, &l)| p.index() == l)
                .count();
        }
        let test = evaluate_patches(&net, test_set)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            learning_rate: config.learning_rate_at(epoch),
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy: test.accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        if best.as_ref().is_none_or(|b| m.test_accuracy > b.2) {
            best = Some((net.clone(), m.epoch, m.test_accuracy));
        }
        metrics.push(m);
    }
    Ok(finish(net, best, metrics, None))
}

fn finish<T: Real>(
    final_net: DeepQualityNet<T>,
    best: Option<(DeepQualityNet<T>, usize, f64)>,
    metrics: Vec<EpochMetrics>,
    aborted: Option<TrainAbort>,
) -> TrainOutcome<T> {
    let (best_net, best_epoch, best_test_accuracy) = best.unwrap_or_else(|| (final_net.clone(), 0, f64::NAN));
    TrainOutcome {
        final_net,
        best_net,
        best_epoch,
        best_test_accuracy,
        metrics,
        aborted,
    }
}

/// Rows are true grades, columns predicted grades.
pub type Confusion = [[usize; NUM_GRADES]; NUM_GRADES];

pub fn confusion_accuracy(confusion: &Confusion) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let hits: usize = (0..NUM_GRADES).map(|i| confusion[i][i]).sum();
    hits as f64 / total as f64
}

pub struct PatchEvaluation<T> {
    pub accuracy: f64,
    pub confusion: Confusion,
    /// In dataset order.
    pub scores: Vec<PatchScore<T>>,
}

/// Scores every patch in `patches` concurrently, preserving order.
pub fn score_patches<'a, T: Real>(
    net: &DeepQualityNet<T>,
    patches: impl IntoParallelIterator<Item = &'a Tensor<T>>,
) -> Result<Vec<PatchScore<T>>> {
    patches.into_par_iter().map(|p| net.predict(p)).collect()
}

pub fn evaluate_patches<T: Real>(net: &DeepQualityNet<T>, dataset: &PatchDataset<T>) -> Result<PatchEvaluation<T>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let scores = score_patches(net, dataset.samples.par_iter().map(|s| &s.patch))?;
    let mut confusion = [[0; NUM_GRADES]; NUM_GRADES];
    for (s, score) in dataset.samples.iter().zip(&scores) {
        confusion[s.grade.index()][score.predicted_grade.index()] += 1;
    }
    Ok(PatchEvaluation {
        accuracy: confusion_accuracy(&confusion),
        confusion,
        scores,
    })
}

/// Among patches whose true grade is c0 or c4, the fraction whose score
/// prefers the true extreme over the opposite one. `None` if there are none.
pub fn extreme_grade_accuracy<T: Real>(labels: &[QualityGrade], scores: &[PatchScore<T>]) -> Option<f64> {
    let (mut n, mut hits) = (0usize, 0usize);
    for (l, s) in labels.iter().zip(scores) {
        let (mine, other) = match *l {
            QualityGrade::C0 => (0, 4),
            QualityGrade::C4 => (4, 0),
            _ => continue,
        };
        n += 1;
        if s.probabilities[mine] > s.probabilities[other] {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}
