use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::cosine;
use super::{AugmentError, Embedder, SyntheticExample};
use crate::ingest::CategorySet;
use crate::preprocess::CleanedExample;
use crate::util::{derive_seed, mean, sample_std};

const MAX_PAIRS_PER_CATEGORY: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub real_len_mean: f64,
    pub real_len_std: f64,
    pub syn_len_mean: f64,
    pub syn_len_std: f64,
    pub vocab_real: usize,
    pub vocab_syn: usize,
    pub coverage: f64,
    pub jaccard: f64,
    pub uniqueness: f64,
    pub diversity: f64,
    pub per_category_coherence: BTreeMap<String, f64>,
    pub cross_similarity_mean: f64,
    pub cross_similarity_std: f64,
}

/// Jaccard index implied by a coverage ratio and the two vocabulary sizes:
/// `|V_r ∩ V_s| = coverage * |V_r|`.
pub fn jaccard_from_coverage(coverage: f64, vocab_real: usize, vocab_syn: usize) -> f64 {
    let inter = coverage * vocab_real as f64;
    inter / (vocab_real as f64 + vocab_syn as f64 - inter)
}

fn vocabulary<'a>(texts: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    texts.flat_map(str::split_whitespace).collect()
}

fn char_lengths<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<f64> {
    texts.map(|t| t.chars().count() as f64).collect()
}

/// Mean pairwise cosine among `vectors`; all pairs when there are at most
/// 10,000 of them, otherwise 10,000 pairs drawn with `seed`.
fn mean_pairwise_cosine(vectors: &[Vec<f64>], seed: u64) -> f64 {
    let n = vectors.len();
    let total_pairs = n * (n - 1) / 2;
    let mut sum = 0.0;
    if total_pairs <= MAX_PAIRS_PER_CATEGORY {
        for i in 0..n {
            for j in (i + 1)..n {
                sum += cosine(&vectors[i], &vectors[j]);
            }
        }
        return sum / total_pairs as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_PAIRS_PER_CATEGORY {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        sum += cosine(&vectors[i], &vectors[j]);
    }
    sum / MAX_PAIRS_PER_CATEGORY as f64
}

fn centroid(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for v in vectors {
        for (a, b) in c.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vectors.len() as f64;
    c.iter_mut().for_each(|a| *a /= n);
    c
}

/// Compares synthetic text against the real corpus it was derived from.
/// Real examples without a label count towards lengths and vocabulary but
/// not towards category centroids.
pub fn quality_report(
    real: &[CleanedExample],
    synthetic: &[SyntheticExample],
    categories: &CategorySet,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<QualityReport, AugmentError> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    let real_lens = char_lengths(real.iter().map(|r| r.cleaned.as_str()));
    let syn_lens = char_lengths(synthetic.iter().map(|s| s.cleaned.as_str()));
    let vr = vocabulary(real.iter().map(|r| r.cleaned.as_str()));
    let vs = vocabulary(synthetic.iter().map(|s| s.cleaned.as_str()));
    let inter = vr.intersection(&vs).count();
    let union = vr.union(&vs).count();
    let distinct: HashSet<&str> = synthetic.iter().map(|s| s.cleaned.as_str()).collect();

    let mut real_by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for r in real {
        if let Some(label) = r.label {
            real_by_class
                .entry(label)
                .or_default()
                .push(embedder.embed(&r.cleaned)?);
        }
    }
    let mut syn_by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for s in synthetic {
        syn_by_class
            .entry(s.label)
            .or_default()
            .push(embedder.embed(&s.cleaned)?);
    }

    let mut diversities = Vec::new();
    let mut coherence = BTreeMap::new();
    let mut cross = Vec::new();
    for (&label, syn_vecs) in &syn_by_class {
        if syn_vecs.len() >= 2 {
            let pair_seed = derive_seed(seed, &format!("diversity:{label}"));
            diversities.push(1.0 - mean_pairwise_cosine(syn_vecs, pair_seed));
        }
        let Some(real_vecs) = real_by_class.get(&label) else {
            continue;
        };
        let c = centroid(real_vecs, embedder.dim());
        let sims: Vec<f64> = syn_vecs.iter().map(|v| cosine(v, &c)).collect();
        let name = categories
            .name(label)
            .map(str::to_string)
            .unwrap_or_else(|| label.to_string());
        coherence.insert(name, mean(&sims));
        cross.extend(sims);
    }

    Ok(QualityReport {
        real_len_mean: mean(&real_lens),
        real_len_std: sample_std(&real_lens),
        syn_len_mean: mean(&syn_lens),
        syn_len_std: sample_std(&syn_lens),
        vocab_real: vr.len(),
        vocab_syn: vs.len(),
        coverage: inter as f64 / vr.len() as f64,
        jaccard: inter as f64 / union as f64,
        uniqueness: distinct.len() as f64 / synthetic.len() as f64,
        diversity: if diversities.is_empty() { 0.0 } else { mean(&diversities) },
        per_category_coherence: coherence,
        cross_similarity_mean: if cross.is_empty() { 0.0 } else { mean(&cross) },
        cross_similarity_std: sample_std(&cross),
    })
}

impl QualityReport {
    /// One `key = value` line per metric, coherence keys prefixed
    /// `coherence.`.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let scalars = [
            ("real_len_mean", self.real_len_mean),
            ("real_len_std", self.real_len_std),
            ("syn_len_mean", self.syn_len_mean),
            ("syn_len_std", self.syn_len_std),
            ("vocab_real", self.vocab_real as f64),
            ("vocab_syn", self.vocab_syn as f64),
            ("coverage", self.coverage),
            ("jaccard", self.jaccard),
            ("uniqueness", self.uniqueness),
            ("diversity", self.diversity),
            ("cross_similarity_mean", self.cross_similarity_mean),
            ("cross_similarity_std", self.cross_similarity_std),
        ];
        for (k, v) in scalars {
            let _ = writeln!(out, "{k} = {v:.6}");
        }
        for (name, v) in &self.per_category_coherence {
            let _ = writeln!(out, "coherence.{name} = {v:.6}");
        }
        out
    }
}
