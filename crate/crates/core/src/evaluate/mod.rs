//! Accuracy, confidence and distribution metrics, significance tests and the
//! cross-validation harness.

mod cv;
mod metrics;
mod stats;

pub use cv::{
    run_cv, write_prediction_dump, Aggregate, CvConfig, CvOutcome, CvReport, FoldReport,
    FoldTrace, MetricSet, TopFraction,
};
pub use metrics::{
    conf_gated_accuracy, distribution_gap, label_distribution, macro_recall, per_class_recall,
    standard_accuracy, top_fraction_accuracy, top_k_accuracy, DistributionGap, GatedAccuracy,
    LabelSource, Prediction,
};
pub use stats::{paired_ttest, student_t_two_tailed_p, PairedTTest};

use crate::augment::AugmentError;
use crate::calibrate::CalibrateError;
use crate::ingest::IngestError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error("empty input")]
    EmptyInput,
    #[error("prediction {0:?} has no true label")]
    MissingTrueLabel(String),
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("k = {k} exceeds the {classes} classes")]
    KExceedsClasses { k: usize, classes: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("all paired differences are identical; t is undefined")]
    DegenerateDifferences,
    #[error("need at least two folds, got {0}")]
    TooFewFolds(usize),
    #[error("label {0:?} is not in the category set")]
    UnknownLabel(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
