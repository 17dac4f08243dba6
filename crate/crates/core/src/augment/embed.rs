use super::AugmentError;
use crate::util::fnv1a;

pub const DEFAULT_EMBED_DIM: usize = 256;

/// Maps cleaned text to a unit vector.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, AugmentError>;
}

/// Signed feature hashing of character 3-grams, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedTrigramEmbedder {
    dim: usize,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        HashedTrigramEmbedder {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl HashedTrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedTrigramEmbedder { dim }
    }
}

/// Character 3-grams of `text`; a string shorter than three characters is
/// its own single gram.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        return vec![text.to_string()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

impl HashedTrigramEmbedder {
    /// Bucket and sign of one gram.
    pub fn slot(&self, gram: &str) -> (usize, f64) {
        let h = fnv1a(gram.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Embedder for HashedTrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, AugmentError> {
        if text.trim().is_empty() {
            return Err(AugmentError::EmptyText);
        }
        let grams = char_trigrams(text);
        let mut signed = vec![0.0; self.dim];
        let mut unsigned = vec![0.0; self.dim];
        for gram in &grams {
            let (slot, sign) = self.slot(gram);
            signed[slot] += sign;
            unsigned[slot] += 1.0;
        }
        // Opposite-signed collisions can cancel everything; fall back to
        // plain counts so the result is still a unit vector.
        let v = if signed.iter().any(|&x| x != 0.0) { signed } else { unsigned };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
