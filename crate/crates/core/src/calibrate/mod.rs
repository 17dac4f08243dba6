//! Post-hoc calibration of classifier logits and calibration metrics.

mod metrics;
mod scaling;

pub use metrics::{bin_index, ece, nll, reliability, ReliabilityBin, ReliabilityTable};
pub use scaling::{
    apply_calibration, calibrated_proba, fit_calibration, CalibrationConfig, CalibrationParams,
    FitMeta, CALIBRATION_FORMAT_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum CalibrateError {
    #[error("need at least as many samples as classes (got {n} samples, {classes} classes)")]
    TooFewSamples { n: usize, classes: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} has a different width from row 0")]
    RaggedRow { row: usize },
    #[error("row {row}: label {label} out of range")]
    InvalidLabel { row: usize, label: usize },
    #[error("row {row}: non-finite logit")]
    NonFinite { row: usize },
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotAProbability { row: usize, sum: f64 },
    #[error("bin count must be positive")]
    InvalidBins,
}
