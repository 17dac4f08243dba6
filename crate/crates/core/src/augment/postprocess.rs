use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::preprocess::{clean, CleanConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Remote,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub cleaned: String,
    pub label: usize,
    /// Id of the real transaction the variant was derived from.
    pub source_id: String,
    pub origin: Origin,
}

/// Cleans raw variants with the same rules as real data, dropping those that
/// clean to the placeholder and repeats within this batch.
pub fn postprocess_synthetic(
    raw: &[String],
    label: usize,
    source_id: &str,
    origin: Origin,
    config: &CleanConfig,
) -> Vec<SyntheticExample> {
    let mut seen = HashSet::new();
    raw.iter()
        .map(|r| clean(r, config))
        .filter(|c| *c != config.placeholder)
        .filter(|c| seen.insert(c.clone()))
        .map(|cleaned| SyntheticExample {
            cleaned,
            label,
            source_id: source_id.to_string(),
            origin,
        })
        .collect()
}
