//! Multinomial logistic regression trained by seeded mini-batch gradient
//! descent on weighted focal or cross-entropy loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{class_weights, cross_entropy_loss_and_grad, focal_loss_and_grad, softmax};
use super::{ModelError, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Focal,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    /// Inverse-frequency class weights; all-ones when false.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Focal,
            gamma: 2.0,
            lr: 0.1,
            epochs: 50,
            batch_size: 256,
            l2: 1e-4,
            seed: 42,
            balanced: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    n_classes: usize,
    n_features: usize,
    /// Row-major `n_classes x n_features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    class_weights: Vec<f64>,
    gamma: f64,
    training_meta: TrainingMeta,
}

impl SoftmaxModel {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn training_meta(&self) -> &TrainingMeta {
        &self.training_meta
    }

    pub(crate) fn check_shapes(&self) -> Result<(), ModelError> {
        let expected = self.n_classes * self.n_features;
        if self.weights.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.n_classes || self.class_weights.len() != self.n_classes {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_classes,
                got: self.bias.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(())
    }

    fn logits_unchecked(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                let row = &self.weights[k * self.n_features..(k + 1) * self.n_features];
                self.bias[k] + x.dot_dense(row)
            })
            .collect()
    }

    pub fn predict_logits(&self, x: &SparseVector) -> Result<Vec<f64>, ModelError> {
        if x.dim() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.dim(),
            });
        }
        Ok(self.logits_unchecked(x))
    }

    pub fn predict_proba(&self, x: &SparseVector) -> Result<Vec<f64>, ModelError> {
        Ok(softmax(&self.predict_logits(x)?))
    }

    fn example_loss_and_grad(
        &self,
        x: &SparseVector,
        label: usize,
        loss: LossKind,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let logits = self.logits_unchecked(x);
        match loss {
            LossKind::Focal => focal_loss_and_grad(&logits, label, &self.class_weights, self.gamma),
            LossKind::CrossEntropy => cross_entropy_loss_and_grad(&logits, label, &self.class_weights),
        }
    }

    /// Mean per-example loss plus `(l2 / 2) ||W||^2`.
    pub fn objective(
        &self,
        features: &[SparseVector],
        labels: &[usize],
        loss: LossKind,
        l2: f64,
    ) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            total += self.example_loss_and_grad(x, y, loss)?.0;
        }
        let penalty = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        Ok(total / features.len().max(1) as f64 + penalty)
    }
}

/// Class weights over the classes present in `labels`; absent classes get
/// weight 1 (they never appear as a target).
fn training_class_weights(labels: &[usize], n_classes: usize, balanced: bool) -> Result<Vec<f64>, ModelError> {
    if !balanced {
        return Ok(vec![1.0; n_classes]);
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..n_classes).filter(|&k| counts[k] > 0).collect();
    let present_counts: Vec<usize> = present.iter().map(|&k| counts[k]).collect();
    let weights = class_weights(&present_counts)?;
    let mut out = vec![1.0; n_classes];
    for (k, w) in present.into_iter().zip(weights) {
        out[k] = w;
    }
    Ok(out)
}

pub fn train(
    features: &[SparseVector],
    labels: &[usize],
    n_classes: usize,
    config: &TrainConfig,
) -> Result<SoftmaxModel, ModelError> {
    if features.len() != labels.len() {
        return Err(ModelError::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(ModelError::InvalidLabel {
            label: bad,
            classes: n_classes,
        });
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ModelError::TooFewClasses(distinct.len()));
    }
    if config.batch_size == 0 || !(config.lr >= 0.0) || !(config.gamma >= 0.0) {
        return Err(ModelError::InvalidConfig(format!(
            "batch_size {} lr {} gamma {}",
            config.batch_size, config.lr, config.gamma
        )));
    }
    let n_features = features[0].dim();
    if let Some(x) = features.iter().find(|x| x.dim() != n_features) {
        return Err(ModelError::DimensionMismatch {
            expected: n_features,
            got: x.dim(),
        });
    }

    let mut model = SoftmaxModel {
        n_classes,
        n_features,
        weights: vec![0.0; n_classes * n_features],
        bias: vec![0.0; n_classes],
        class_weights: training_class_weights(labels, n_classes, config.balanced)?,
        gamma: match config.loss {
            LossKind::Focal => config.gamma,
            LossKind::CrossEntropy => 0.0,
        },
        training_meta: TrainingMeta {
            loss: config.loss,
            epochs: config.epochs,
            lr: config.lr,
            l2: config.l2,
            batch_size: config.batch_size,
            seed: config.seed,
            final_train_loss: f64::NAN,
        },
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut grad_w = vec![0.0; n_classes * n_features];
    let mut grad_b = vec![0.0; n_classes];
    let mut touched: Vec<usize> = Vec::new();
    let mut is_touched = vec![false; n_features];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &features[i];
                let (loss, g) = model
                    .example_loss_and_grad(x, labels[i], config.loss)
                    .map_err(|e| match e {
                        ModelError::NonFiniteInput => ModelError::Diverged {
                            epoch,
                            lr: config.lr,
                        },
                        other => other,
                    })?;
                epoch_loss += loss;
                for (k, gk) in g.iter().enumerate() {
                    grad_b[k] += gk;
                    let row = &mut grad_w[k * n_features..(k + 1) * n_features];
                    for (col, v) in x.iter() {
                        row[col] += gk * v;
                    }
                }
                for (col, _) in x.iter() {
                    if !is_touched[col] {
                        is_touched[col] = true;
                        touched.push(col);
                    }
                }
            }
            let scale = config.lr / batch.len() as f64;
            if config.l2 != 0.0 {
                let decay = 1.0 - config.lr * config.l2;
                model.weights.iter_mut().for_each(|w| *w *= decay);
            }
            for &col in &touched {
                for k in 0..n_classes {
                    let at = k * n_features + col;
                    model.weights[at] -= scale * grad_w[at];
                    grad_w[at] = 0.0;
                }
                is_touched[col] = false;
            }
            touched.clear();
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= scale * g;
            }
        }
        if !epoch_loss.is_finite() || model.bias.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::Diverged {
                epoch,
                lr: config.lr,
            });
        }
    }
    let final_loss = model.objective(features, labels, config.loss, config.l2)?;
    if !final_loss.is_finite() {
        return Err(ModelError::Diverged {
            epoch: config.epochs,
            lr: config.lr,
        });
    }
    model.training_meta.final_train_loss = final_loss;
    Ok(model)
}
