//! Description normalization and grouping.

mod clean;
mod group;

pub use clean::{
    clean, is_clean_alphabet, parse_abbreviations, parse_token_list, CleanConfig,
    DEFAULT_PLACEHOLDER,
};
pub use group::{group, group_key, propagate_label, CleanedExample, DescriptionGroup, GroupMode};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("group {0:?} is flagged discard and cannot be labeled")]
    DiscardedGroup(String),
    #[error("invalid clean config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
