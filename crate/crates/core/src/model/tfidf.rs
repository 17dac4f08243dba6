//! Word n-gram TF-IDF features with smoothed IDF.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ModelError, SparseVector};
use crate::preprocess::CleanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub max_features: usize,
    pub stopwords: BTreeSet<String>,
    pub sublinear_tf: bool,
    pub l2_normalize: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            ngram_min: 1,
            ngram_max: 2,
            max_features: 10_000,
            stopwords: CleanConfig::default_stopwords(),
            sublinear_tf: false,
            l2_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Terms in column order (lexicographic).
    terms: Vec<String>,
    idf: Vec<f64>,
    config: TfidfConfig,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Stopword tokens are removed first, then n-grams are formed over the
/// remaining tokens joined by single spaces.
pub fn ngrams(text: &str, config: &TfidfConfig) -> Vec<String> {
    let tokens: Vec<&str> = text
        .split_whitespace()
        .filter(|t| !config.stopwords.contains(*t))
        .collect();
    let mut out = Vec::new();
    for n in config.ngram_min.max(1)..=config.ngram_max {
        if n > tokens.len() {
            break;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

pub fn fit_tfidf(corpus: &[&str], config: TfidfConfig) -> Result<TfidfModel, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if config.ngram_min == 0 || config.ngram_min > config.ngram_max {
        return Err(ModelError::InvalidConfig(format!(
            "n-gram range ({}, {}) is invalid",
            config.ngram_min, config.ngram_max
        )));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: HashSet<String> = ngrams(doc, &config).into_iter().collect();
        for term in unique {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    // BTreeMap iteration is lexicographic, and the sort is stable, so ties
    // in document frequency keep lexicographic order.
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(config.max_features);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));

    let n_docs = corpus.len() as f64;
    let idf = ranked
        .iter()
        .map(|(_, df)| ((1.0 + n_docs) / (1.0 + *df as f64)).ln() + 1.0)
        .collect();
    let terms = ranked.into_iter().map(|(t, _)| t).collect();
    Ok(TfidfModel::from_parts(terms, idf, config))
}

impl TfidfModel {
    pub fn from_parts(terms: Vec<String>, idf: Vec<f64>, config: TfidfConfig) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TfidfModel {
            terms,
            idf,
            config,
            index,
        }
    }

    /// Rebuilds the term index after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.column(term).map(|c| self.idf[c])
    }

    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for gram in ngrams(text, &self.config) {
            if let Some(&col) = self.index.get(&gram) {
                *counts.entry(col).or_insert(0) += 1;
            }
        }
        let pairs = counts
            .into_iter()
            .map(|(col, count)| {
                let tf = if self.config.sublinear_tf {
                    1.0 + (count as f64).ln()
                } else {
                    count as f64
                };
                (col, tf * self.idf[col as usize])
            })
            .collect();
        let mut v = SparseVector::from_pairs(self.dim(), pairs);
        if self.config.l2_normalize {
            v.normalize();
        }
        v
    }
}
