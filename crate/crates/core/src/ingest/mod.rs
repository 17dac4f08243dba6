//! Loading, validating, persisting and splitting transaction datasets.
//!
//! Dataset files carry the columns `date,amount,description[,label][,company][,id]`
//! as CSV (RFC 4180 quoting) or JSON lines. Dates are `YYYY-MM-DD`; amounts
//! are decimal strings held internally as pence.

mod io;
mod split;
mod transaction;

pub use io::{
    export_labeled, load_dataset, load_transactions, read_csv, read_jsonl, save_transactions,
    write_csv, write_jsonl, Format,
};
pub use split::{
    split_train_calibration, stratified_kfold, SplitKind, SplitSpec, TrainCalibrationSplit,
};
pub use transaction::{Amount, CategorySet, Transaction};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: invalid date {value:?} (expected YYYY-MM-DD)")]
    BadDate { row: usize, value: String },
    #[error("row {row}: invalid amount: {reason}")]
    BadAmount { row: usize, reason: String },
    #[error("duplicate transaction id {0:?}")]
    DuplicateId(String),
    #[error("invalid category set: {0}")]
    InvalidCategory(String),
    #[error("k = {k} exceeds the number of examples ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("split would leave a side empty (train {train}, calibration {calibration})")]
    EmptySplit { train: usize, calibration: usize },
    #[error("invalid split parameters: {0}")]
    InvalidSplit(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {row}: {source}")]
    Json {
        row: usize,
        #[source]
        source: serde_json::Error,
    },
}
