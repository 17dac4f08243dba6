//! Synthetic minority-class augmentation and synthetic-data quality metrics.

mod embed;
mod offline;
mod plan;
mod postprocess;
mod quality;
mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use embed::{char_trigrams, cosine, Embedder, HashedTrigramEmbedder, DEFAULT_EMBED_DIM};
pub use offline::{generate_offline, Lexicon, OfflineGenerator};
pub use plan::{
    allocate_proportional, build_balance_plan, BalanceConfig, BalanceOverrides, BalancePlan,
    PlanEntry,
};
pub use postprocess::{postprocess_synthetic, Origin, SyntheticExample};
pub use quality::{jaccard_from_coverage, quality_report, QualityReport};
pub use remote::{
    parse_completion, render_prompt, GenerationClientConfig, RateLimiter, RemoteGenerator,
    API_KEY_ENV, DEFAULT_PROMPT_TEMPLATE,
};

use crate::ingest::CategorySet;
use crate::preprocess::{CleanConfig, CleanedExample};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("category {0:?} has no real examples and no override")]
    ZeroCount(String),
    #[error("lexicon has no synonyms for category {0:?}")]
    LexiconMissing(String),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("invalid balance overrides: {0}")]
    InvalidOverrides(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("generator unavailable after {attempts} attempts: {message}")]
    RemoteUnavailable { attempts: u32, message: String },
    #[error("generator rate limited after {attempts} attempts (retry after {retry_after_secs:?} s)")]
    RateLimited {
        attempts: u32,
        retry_after_secs: Option<f64>,
    },
    #[error("generator rejected the request with status {status}: {body}")]
    RemoteRejected { status: u16, body: String },
    #[error("malformed generator response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("empty input")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AugmentError {
    /// True for failures of the remote generator service itself.
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            AugmentError::RemoteUnavailable { .. }
                | AugmentError::RateLimited { .. }
                | AugmentError::RemoteRejected { .. }
                | AugmentError::MalformedResponse(_)
                | AugmentError::MissingCredential(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub description: String,
    pub category: String,
    pub n_variants: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenRequest {
    /// Request with temperature 0.7 and 512 max tokens.
    pub fn new(description: &str, category: &str, n_variants: usize) -> Self {
        GenRequest {
            description: description.to_string(),
            category: category.to_string(),
            n_variants,
            temperature: 0.7,
            max_tokens: 512,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.n_variants == 0 {
            return Err(AugmentError::InvalidRequest("n_variants must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AugmentError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.description.trim().is_empty() {
            return Err(AugmentError::InvalidRequest("empty description".into()));
        }
        Ok(())
    }
}

pub trait VariantGenerator: Sync {
    fn origin(&self) -> Origin;

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, AugmentError>;

    /// Larger requests are split into chunks of at most this many variants.
    fn max_variants_per_request(&self) -> Option<usize> {
        None
    }

    fn generate_batch(&self, reqs: &[GenRequest]) -> Vec<Result<Vec<String>, AugmentError>> {
        reqs.iter().map(|r| self.generate(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub balance: BalanceConfig,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            balance: BalanceConfig::default(),
            temperature: 0.7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOutput {
    pub plan: BalancePlan,
    pub synthetic: Vec<SyntheticExample>,
}

/// Plans and generates synthetic examples for the labeled, non-placeholder
/// rows of `examples`. Each category's quota is spread over its distinct
/// cleaned descriptions in proportion to how often each occurs; a variant's
/// `source_id` is the smallest id sharing that description.
pub fn augment_examples(
    examples: &[CleanedExample],
    categories: &CategorySet,
    config: &AugmentConfig,
    generator: &dyn VariantGenerator,
    clean_config: &CleanConfig,
) -> Result<AugmentOutput, AugmentError> {
    let mut by_class: BTreeMap<usize, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for ex in examples {
        let Some(label) = ex.label else { continue };
        if ex.cleaned == clean_config.placeholder {
            continue;
        }
        by_class
            .entry(label)
            .or_default()
            .entry(ex.cleaned.as_str())
            .or_default()
            .push(ex.transaction_id.as_str());
    }
    let mut counts = BTreeMap::new();
    for (&label, groups) in &by_class {
        let name = categories.name(label).ok_or_else(|| {
            AugmentError::InvalidRequest(format!("label {label} is not a known category"))
        })?;
        counts.insert(name.to_string(), groups.values().map(Vec::len).sum());
    }
    let plan = build_balance_plan(&counts, &config.balance)?;

    // (label, source id, request) for every chunk, in deterministic order.
    let mut jobs: Vec<(usize, String, usize)> = Vec::new();
    let mut requests = Vec::new();
    for (&label, groups) in &by_class {
        let name = categories.name(label).expect("checked above");
        let quota = plan.get(name).map(PlanEntry::to_generate).unwrap_or(0);
        if quota == 0 {
            continue;
        }
        let descriptions: Vec<(&str, &Vec<&str>)> = groups.iter().map(|(d, ids)| (*d, ids)).collect();
        let sizes: Vec<usize> = descriptions.iter().map(|(_, ids)| ids.len()).collect();
        for ((description, ids), n) in descriptions.iter().zip(allocate_proportional(quota, &sizes)) {
            if n == 0 {
                continue;
            }
            let source = ids.iter().min().expect("non-empty group").to_string();
            let group_index = jobs.len();
            let chunk = generator.max_variants_per_request().unwrap_or(n).max(1);
            let mut remaining = n;
            while remaining > 0 {
                let take = remaining.min(chunk);
                requests.push((
                    group_index,
                    GenRequest {
                        description: description.to_string(),
                        category: name.to_string(),
                        n_variants: take,
                        temperature: config.temperature,
                        max_tokens: config.max_tokens,
                    },
                ));
                remaining -= take;
            }
            jobs.push((label, source, n));
        }
    }

    let batch: Vec<GenRequest> = requests.iter().map(|(_, r)| r.clone()).collect();
    let results = generator.generate_batch(&batch);
    let mut raw_by_job: Vec<Vec<String>> = vec![Vec::new(); jobs.len()];
    for ((job, _), result) in requests.iter().zip(results) {
        raw_by_job[*job].extend(result?);
    }
    let mut synthetic = Vec::new();
    for ((label, source, _), raw) in jobs.iter().zip(raw_by_job) {
        synthetic.extend(postprocess_synthetic(
            &raw,
            *label,
            source,
            generator.origin(),
            clean_config,
        ));
    }
    Ok(AugmentOutput { plan, synthetic })
}
