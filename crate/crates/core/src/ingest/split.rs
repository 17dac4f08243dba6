//! Seeded, stratified fold and calibration splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Kfold,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub k: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            kind: SplitKind::Kfold,
            k: 5,
            calibration_fraction: 0.15,
            seed: 42,
        }
    }
}

/// Result of [`split_train_calibration`]. `warnings` lists classes that were
/// kept whole on the larger side because splitting them would leave the
/// other side without members of that class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainCalibrationSplit {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub warnings: Vec<String>,
}

fn by_class(indices: impl IntoIterator<Item = usize>, labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in indices {
        classes.entry(labels[i]).or_default().push(i);
    }
    classes
}

/// Partitions `0..labels.len()` into `k` folds.
///
/// Each class is shuffled independently and dealt round-robin. The dealing
/// position carries over from one class to the next, so fold sizes stay
/// within one of each other as well as per-class counts.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, IngestError> {
    if k < 2 {
        return Err(IngestError::InvalidSplit(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(IngestError::KTooLarge { k, n: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for (_, mut members) in by_class(0..labels.len(), labels) {
        members.shuffle(&mut rng);
        for idx in members {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Splits `indices` into a training part and a held-out calibration part.
///
/// Each class sends `ceil(fraction * n_class)` members to calibration. A
/// class that would leave either side without members goes entirely to the
/// larger side (training when `fraction <= 0.5`).
pub fn split_train_calibration(
    indices: &[usize],
    calibration_fraction: f64,
    labels: &[usize],
    seed: u64,
) -> Result<TrainCalibrationSplit, IngestError> {
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(IngestError::InvalidSplit(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let calibration_is_larger = calibration_fraction > 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut calibration = Vec::new();
    let mut warnings = Vec::new();
    for (class, mut members) in by_class(indices.iter().copied(), labels) {
        members.sort_unstable();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_cal = (calibration_fraction * n as f64).ceil() as usize;
        if n_cal == 0 || n_cal >= n {
            warnings.push(format!(
                "class {class} ({n} members) kept on the {} side",
                if calibration_is_larger { "calibration" } else { "training" }
            ));
            if calibration_is_larger {
                calibration.extend(members);
            } else {
                train.extend(members);
            }
            continue;
        }
        calibration.extend_from_slice(&members[..n_cal]);
        train.extend_from_slice(&members[n_cal..]);
    }
    if train.is_empty() || calibration.is_empty() {
        return Err(IngestError::EmptySplit {
            train: train.len(),
            calibration: calibration.len(),
        });
    }
    train.sort_unstable();
    calibration.sort_unstable();
    Ok(TrainCalibrationSplit {
        train,
        calibration,
        warnings,
    })
}
