//! Temperature-plus-bias scaling of logits, `z / T + b`, fitted by
//! minimizing held-out negative log-likelihood.

use serde::{Deserialize, Serialize};

use super::CalibrateError;
use crate::model::{log_sum_exp, softmax};

/// Bumped whenever the serialized layout of [`CalibrationParams`] changes.
pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub version: u32,
    pub temperature: f64,
    pub bias: Vec<f64>,
    pub fit_meta: FitMeta,
}

impl CalibrationParams {
    /// `T = 1`, `b = 0`.
    pub fn identity(n_classes: usize) -> Self {
        CalibrationParams {
            version: CALIBRATION_FORMAT_VERSION,
            temperature: 1.0,
            bias: vec![0.0; n_classes],
            fit_meta: FitMeta {
                iterations: 0,
                initial_nll: f64::NAN,
                final_nll: f64::NAN,
                seed: 0,
            },
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub iters: usize,
    pub lr: f64,
    /// When false only the temperature is fitted and `b` stays zero.
    pub fit_bias: bool,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            iters: 500,
            lr: 0.01,
            fit_bias: true,
            seed: 0,
        }
    }
}

pub fn apply_calibration(params: &CalibrationParams, logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .zip(&params.bias)
        .map(|(z, b)| z / params.temperature + b)
        .collect()
}

/// Calibrated class probabilities for one row of logits.
pub fn calibrated_proba(params: &CalibrationParams, logits: &[f64]) -> Vec<f64> {
    softmax(&apply_calibration(params, logits))
}

struct Objective<'a> {
    logits: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
}

impl Objective<'_> {
    fn nll(&self, log_t: f64, bias: &[f64]) -> f64 {
        let inv_t = (-log_t).exp();
        let mut scaled = vec![0.0; self.n_classes];
        let mut total = 0.0;
        for (row, &y) in self.logits.iter().zip(self.labels) {
            for (s, (z, b)) in scaled.iter_mut().zip(row.iter().zip(bias)) {
                *s = z * inv_t + b;
            }
            total += log_sum_exp(&scaled) - scaled[y];
        }
        total / self.logits.len() as f64
    }

    /// Gradient with respect to `(log T, b)`.
    fn grad(&self, log_t: f64, bias: &[f64]) -> (f64, Vec<f64>) {
        let inv_t = (-log_t).exp();
        let mut g_log_t = 0.0;
        let mut g_bias = vec![0.0; self.n_classes];
        let mut scaled = vec![0.0; self.n_classes];
        for (row, &y) in self.logits.iter().zip(self.labels) {
            for (s, (z, b)) in scaled.iter_mut().zip(row.iter().zip(bias)) {
                *s = z * inv_t + b;
            }
            let p = softmax(&scaled);
            for j in 0..self.n_classes {
                let residual = p[j] - if j == y { 1.0 } else { 0.0 };
                g_bias[j] += residual;
                g_log_t -= residual * row[j] * inv_t;
            }
        }
        let n = self.logits.len() as f64;
        (g_log_t / n, g_bias.into_iter().map(|g| g / n).collect())
    }
}

/// Gradient descent on `(log T, b)` from `(0, 0)`. A step is taken only if
/// it lowers the NLL; a rejected step halves the step size and an accepted
/// one grows it by a factor 1.25, so the returned NLL never exceeds the
/// starting one.
pub fn fit_calibration(
    logits: &[Vec<f64>],
    labels: &[usize],
    config: &CalibrationConfig,
) -> Result<CalibrationParams, CalibrateError> {
    let n_classes = logits.first().map(Vec::len).unwrap_or(0);
    if logits.len() < n_classes.max(1) {
        return Err(CalibrateError::TooFewSamples {
            n: logits.len(),
            classes: n_classes,
        });
    }
    if labels.len() != logits.len() {
        return Err(CalibrateError::LengthMismatch {
            rows: logits.len(),
            labels: labels.len(),
        });
    }
    for (row, (z, &y)) in logits.iter().zip(labels).enumerate() {
        if z.len() != n_classes {
            return Err(CalibrateError::RaggedRow { row });
        }
        if y >= n_classes {
            return Err(CalibrateError::InvalidLabel { row, label: y });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(CalibrateError::NonFinite { row });
        }
    }

    let objective = Objective {
        logits,
        labels,
        n_classes,
    };
    let mut log_t = 0.0;
    let mut bias = vec![0.0; n_classes];
    let initial_nll = objective.nll(log_t, &bias);
    let mut current = initial_nll;
    let mut step = config.lr;
    let mut iterations = 0;

    for _ in 0..config.iters {
        iterations += 1;
        let (g_t, mut g_b) = objective.grad(log_t, &bias);
        if !config.fit_bias {
            g_b.iter_mut().for_each(|g| *g = 0.0);
        }
        let grad_norm = (g_t * g_t + g_b.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm < 1e-12 {
            break;
        }
        let mut accepted = false;
        while step > 1e-14 {
            let cand_t = log_t - step * g_t;
            let cand_b: Vec<f64> = bias.iter().zip(&g_b).map(|(b, g)| b - step * g).collect();
            let cand = objective.nll(cand_t, &cand_b);
            if cand < current {
                log_t = cand_t;
                bias = cand_b;
                current = cand;
                step *= 1.25;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(CalibrationParams {
        version: CALIBRATION_FORMAT_VERSION,
        temperature: log_t.exp(),
        bias,
        fit_meta: FitMeta {
            iterations,
            initial_nll,
            final_nll: current,
            seed: config.seed,
        },
    })
}
