//! TF-IDF features, focal-loss softmax regression and the persisted bundle.

mod bundle;
mod loss;
mod softmax;
mod sparse;
mod tfidf;

pub use bundle::{ClassifierBundle, BUNDLE_FORMAT_VERSION};
pub use loss::{
    class_weights, cross_entropy_loss_and_grad, focal_loss_and_grad, log_sum_exp, softmax,
    PROB_FLOOR,
};
pub use softmax::{train, LossKind, SoftmaxModel, TrainConfig, TrainingMeta};
pub use sparse::SparseVector;
pub use tfidf::{fit_tfidf, ngrams, TfidfConfig, TfidfModel};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("class {0} has no training examples")]
    ZeroClassCount(usize),
    #[error("training data covers only {0} distinct class(es)")]
    TooFewClasses(usize),
    #[error("training diverged at epoch {epoch} (lr {lr}); try a smaller learning rate")]
    Diverged { epoch: usize, lr: f64 },
    #[error("bundle format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("bundle is inconsistent: {0}")]
    InconsistentBundle(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed bundle: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}
