//! Softmax, weighted focal loss and weighted cross-entropy, each with its
//! analytic gradient with respect to the logits.

use super::ModelError;

/// Lower bound applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn check_inputs(logits: &[f64], target: usize, alpha: &[f64]) -> Result<(), ModelError> {
    if target >= logits.len() {
        return Err(ModelError::InvalidLabel {
            label: target,
            classes: logits.len(),
        });
    }
    if alpha.len() != logits.len() {
        return Err(ModelError::DimensionMismatch {
            expected: logits.len(),
            got: alpha.len(),
        });
    }
    if logits.iter().chain(alpha).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(())
}

/// `-alpha_t (1 - p_t)^gamma ln p_t` and its gradient.
///
/// With `m = -alpha_t [(1-p)^gamma - gamma p (1-p)^(gamma-1) ln p]` the
/// gradient is `m (delta_tj - p_j)`. `1 - p_t` is accumulated from the other
/// classes' probabilities so it stays accurate when `p_t` is close to one.
pub fn focal_loss_and_grad(
    logits: &[f64],
    target: usize,
    alpha: &[f64],
    gamma: f64,
) -> Result<(f64, Vec<f64>), ModelError> {
    check_inputs(logits, target, alpha)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let probs = softmax(logits);
    let lse = log_sum_exp(logits);
    let mut ln_p = logits[target] - lse;
    let mut p = probs[target];
    if p < PROB_FLOOR {
        p = PROB_FLOOR;
        ln_p = PROB_FLOOR.ln();
    }
    let one_minus: f64 = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &q)| q)
        .sum::<f64>()
        .min(1.0 - PROB_FLOOR);
    let a = alpha[target];

    let modulator = one_minus.powf(gamma);
    let loss = -a * modulator * ln_p;

    let focus_term = if gamma == 0.0 || one_minus == 0.0 {
        0.0
    } else {
        gamma * p * one_minus.powf(gamma - 1.0) * ln_p
    };
    let m = -a * (modulator - focus_term);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| m * (if j == target { 1.0 } else { 0.0 } - pj))
        .collect();
    Ok((loss, grad))
}

/// `-alpha_t ln p_t` and its gradient `alpha_t (p - onehot)`.
pub fn cross_entropy_loss_and_grad(
    logits: &[f64],
    target: usize,
    alpha: &[f64],
) -> Result<(f64, Vec<f64>), ModelError> {
    check_inputs(logits, target, alpha)?;
    let probs = softmax(logits);
    let ln_p = (logits[target] - log_sum_exp(logits)).max(PROB_FLOOR.ln());
    let a = alpha[target];
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| a * (pj - if j == target { 1.0 } else { 0.0 }))
        .collect();
    Ok((-a * ln_p, grad))
}

/// Inverse-frequency class weights `N / (K n_t)`, rescaled to mean one.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>, ModelError> {
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(ModelError::ZeroClassCount(class));
    }
    let k = counts.len() as f64;
    let n: usize = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&c| n as f64 / (k * c as f64)).collect();
    let mean = raw.iter().sum::<f64>() / k;
    Ok(raw.into_iter().map(|a| a / mean).collect())
}
