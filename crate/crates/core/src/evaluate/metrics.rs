use serde::{Deserialize, Serialize};

use super::EvaluateError;
use crate::util::{argmax, top_k_indices};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub transaction_id: String,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
}

impl Prediction {
    pub fn new(transaction_id: impl Into<String>, probs: Vec<f64>, true_label: Option<usize>) -> Self {
        let predicted = argmax(&probs);
        Prediction {
            transaction_id: transaction_id.into(),
            confidence: probs[predicted],
            predicted,
            probs,
            true_label,
        }
    }

    /// Class ids of the `k` most probable classes.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        top_k_indices(&self.probs, k)
    }
}

fn labeled(preds: &[Prediction]) -> Result<Vec<(&Prediction, usize)>, EvaluateError> {
    if preds.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    preds
        .iter()
        .map(|p| {
            p.true_label
                .map(|y| (p, y))
                .ok_or_else(|| EvaluateError::MissingTrueLabel(p.transaction_id.clone()))
        })
        .collect()
}

fn accuracy_of<'a>(items: impl Iterator<Item = &'a (&'a Prediction, usize)>) -> (usize, usize) {
    items.fold((0, 0), |(hit, n), (p, y)| (hit + usize::from(p.predicted == *y), n + 1))
}

pub fn standard_accuracy(preds: &[Prediction]) -> Result<f64, EvaluateError> {
    let items = labeled(preds)?;
    let (hit, n) = accuracy_of(items.iter());
    Ok(hit as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedAccuracy {
    /// `None` when no prediction clears the threshold.
    pub accuracy: Option<f64>,
    pub coverage: f64,
    pub n_selected: usize,
}

/// Accuracy on predictions with confidence strictly above `threshold`.
pub fn conf_gated_accuracy(preds: &[Prediction], threshold: f64) -> Result<GatedAccuracy, EvaluateError> {
    let items = labeled(preds)?;
    let (hit, n) = accuracy_of(items.iter().filter(|(p, _)| p.confidence > threshold));
    Ok(GatedAccuracy {
        accuracy: (n > 0).then(|| hit as f64 / n as f64),
        coverage: n as f64 / items.len() as f64,
        n_selected: n,
    })
}

/// Accuracy on the `ceil(q * n)` most confident predictions, ties broken by
/// transaction id ascending.
pub fn top_fraction_accuracy(preds: &[Prediction], q: f64) -> Result<f64, EvaluateError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(EvaluateError::InvalidFraction(q));
    }
    let mut items = labeled(preds)?;
    items.sort_by(|(a, _), (b, _)| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.transaction_id.cmp(&b.transaction_id))
    });
    let take = ((q * items.len() as f64).ceil() as usize).clamp(1, items.len());
    let (hit, n) = accuracy_of(items[..take].iter());
    Ok(hit as f64 / n as f64)
}

pub fn top_k_accuracy(preds: &[Prediction], k: usize) -> Result<f64, EvaluateError> {
    let items = labeled(preds)?;
    let classes = items[0].0.probs.len();
    if k > classes {
        return Err(EvaluateError::KExceedsClasses { k, classes });
    }
    let hit = items
        .iter()
        .filter(|(p, y)| p.top_k(k).contains(y))
        .count();
    Ok(hit as f64 / items.len() as f64)
}

/// Recall per class; `None` for classes absent from the true labels.
pub fn per_class_recall(preds: &[Prediction], n_classes: usize) -> Result<Vec<Option<f64>>, EvaluateError> {
    let items = labeled(preds)?;
    let mut support = vec![0usize; n_classes];
    let mut hits = vec![0usize; n_classes];
    for (p, y) in &items {
        if *y >= n_classes {
            return Err(EvaluateError::LengthMismatch { expected: n_classes, got: *y + 1 });
        }
        support[*y] += 1;
        if p.predicted == *y {
            hits[*y] += 1;
        }
    }
    Ok(support
        .iter()
        .zip(&hits)
        .map(|(&s, &h)| (s > 0).then(|| h as f64 / s as f64))
        .collect())
}

/// Mean recall over `classes`, skipping those without support.
pub fn macro_recall(recall: &[Option<f64>], classes: &[usize]) -> Option<f64> {
    let vals: Vec<f64> = classes.iter().filter_map(|&c| recall.get(c).copied().flatten()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Predicted,
    True,
}

pub fn label_distribution(
    preds: &[Prediction],
    n_classes: usize,
    source: LabelSource,
) -> Result<Vec<f64>, EvaluateError> {
    if preds.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    let mut counts = vec![0usize; n_classes];
    for p in preds {
        let c = match source {
            LabelSource::Predicted => p.predicted,
            LabelSource::True => p
                .true_label
                .ok_or_else(|| EvaluateError::MissingTrueLabel(p.transaction_id.clone()))?,
        };
        if c >= n_classes {
            return Err(EvaluateError::LengthMismatch { expected: n_classes, got: c + 1 });
        }
        counts[c] += 1;
    }
    let n = preds.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionGap {
    pub tv_distance: f64,
    /// `p[i] - q[i]`.
    pub per_class_diff: Vec<f64>,
}

pub fn distribution_gap(p: &[f64], q: &[f64]) -> Result<DistributionGap, EvaluateError> {
    if p.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(EvaluateError::LengthMismatch { expected: p.len(), got: q.len() });
    }
    let per_class_diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    Ok(DistributionGap {
        tv_distance: 0.5 * per_class_diff.iter().map(|d| d.abs()).sum::<f64>(),
        per_class_diff,
    })
}
