//! Categorisation of SME bank transactions from their free-text descriptions.

pub mod augment;
pub mod calibrate;
pub mod evaluate;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod util;
