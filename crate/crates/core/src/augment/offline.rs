use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, GenRequest, Origin, VariantGenerator};
use crate::util::derive_seed;

/// Category name to synonym sets of head tokens (merchant names and other
/// category-specific words). TOML layout: `utilities = [["biffa", "veolia"], ...]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    categories: BTreeMap<String, Vec<Vec<String>>>,
}

impl Lexicon {
    pub fn new(categories: BTreeMap<String, Vec<Vec<String>>>) -> Result<Self, AugmentError> {
        let lexicon = Lexicon { categories };
        lexicon.validate()?;
        Ok(lexicon)
    }

    fn validate(&self) -> Result<(), AugmentError> {
        for (category, sets) in &self.categories {
            for token in sets.iter().flatten() {
                let ok = !token.is_empty()
                    && token
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
                if !ok {
                    return Err(AugmentError::InvalidLexicon(format!(
                        "{category}: token {token:?} must be lowercase ASCII letters or digits"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let categories: BTreeMap<String, Vec<Vec<String>>> =
            toml::from_str(text).map_err(|e| AugmentError::InvalidLexicon(e.to_string()))?;
        Lexicon::new(categories)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.categories).expect("lexicon serializes")
    }

    /// Non-empty synonym sets for a category.
    pub fn sets(&self, category: &str) -> Vec<&[String]> {
        self.categories
            .get(category)
            .map(|sets| {
                sets.iter()
                    .filter(|s| !s.is_empty())
                    .map(Vec::as_slice)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    /// True if `token` is a head token of `category`.
    pub fn contains(&self, category: &str, token: &str) -> bool {
        self.sets(category)
            .iter()
            .any(|set| set.iter().any(|t| t == token))
    }
}

/// Deterministic rule-based rephraser: swaps head tokens for synonyms,
/// perturbs digits in reference tokens and reorders the remaining words.
#[derive(Debug, Clone)]
pub struct OfflineGenerator {
    lexicon: Lexicon,
    seed: u64,
}

impl OfflineGenerator {
    pub fn new(lexicon: Lexicon, seed: u64) -> Self {
        OfflineGenerator { lexicon, seed }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl VariantGenerator for OfflineGenerator {
    fn origin(&self) -> Origin {
        Origin::Offline
    }

    fn generate(&self, req: &GenRequest) -> Result<Vec<String>, AugmentError> {
        generate_offline(req, &self.lexicon, self.seed)
    }
}

struct Rephraser<'a> {
    tokens: Vec<&'a str>,
    /// Synonym set for each head token position.
    heads: Vec<Option<&'a [String]>>,
    sets: Vec<&'a [String]>,
    original: String,
}

impl<'a> Rephraser<'a> {
    fn new(description: &'a str, sets: Vec<&'a [String]>) -> Self {
        let mut lookup: HashMap<&str, &[String]> = HashMap::new();
        for set in &sets {
            for token in set.iter() {
                lookup.entry(token.as_str()).or_insert(*set);
            }
        }
        let tokens: Vec<&str> = description.split_whitespace().collect();
        let heads = tokens.iter().map(|t| lookup.get(t).copied()).collect();
        Rephraser {
            original: tokens.join(" "),
            tokens,
            heads,
            sets,
        }
    }

    fn random_head(&self, rng: &mut ChaCha8Rng) -> String {
        let set = self.sets.choose(rng).expect("at least one set");
        set.choose(rng).expect("non-empty set").clone()
    }

    fn variant(&self, rng: &mut ChaCha8Rng) -> String {
        let mut out: Vec<(String, bool)> = self
            .tokens
            .iter()
            .zip(&self.heads)
            .map(|(t, h)| (t.to_string(), h.is_some()))
            .collect();
        let mut swapped_any = false;
        for (i, head) in self.heads.iter().enumerate() {
            let Some(set) = head else { continue };
            if set.len() < 2 || (swapped_any && rng.gen_bool(0.5)) {
                continue;
            }
            let choices: Vec<&String> = set.iter().filter(|t| **t != out[i].0).collect();
            if let Some(choice) = choices.choose(rng) {
                out[i].0 = (*choice).clone();
                swapped_any = true;
            }
        }
        if self.heads.iter().all(Option::is_none) {
            out.insert(0, (self.random_head(rng), true));
        }

        for (token, is_head) in out.iter_mut() {
            if !*is_head && token.bytes().any(|b| b.is_ascii_digit()) {
                *token = mutate_digits(token, rng);
            }
        }

        let free: Vec<usize> = (0..out.len()).filter(|&i| !out[i].1).collect();
        if free.len() >= 2 && rng.gen_bool(0.5) {
            let mut moved: Vec<String> = free.iter().map(|&i| out[i].0.clone()).collect();
            moved.shuffle(rng);
            for (&i, token) in free.iter().zip(moved) {
                out[i].0 = token;
            }
        }

        let mut text = out
            .iter()
            .map(|(t, _)| t.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if text == self.original {
            text.push(' ');
            text.push_str(&self.random_head(rng));
        }
        text
    }
}

/// Changes at least one digit of `token`, leaving letters alone.
fn mutate_digits(token: &str, rng: &mut ChaCha8Rng) -> String {
    let mut bytes = token.as_bytes().to_vec();
    let positions: Vec<usize> = (0..bytes.len()).filter(|&i| bytes[i].is_ascii_digit()).collect();
    let forced = *positions.choose(rng).expect("token has a digit");
    for &i in &positions {
        if i == forced || rng.gen_bool(0.3) {
            let old = bytes[i] - b'0';
            let new = (old + rng.gen_range(1..10)) % 10;
            bytes[i] = b'0' + new;
        }
    }
    String::from_utf8(bytes).expect("ASCII in, ASCII out")
}

/// Exactly `n_variants` strings, none equal to the input and each holding
/// at least one head token of the category. Distinct whenever the rewrite
/// space allows it.
pub fn generate_offline(
    req: &GenRequest,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Vec<String>, AugmentError> {
    req.validate()?;
    let sets = lexicon.sets(&req.category);
    if sets.is_empty() {
        return Err(AugmentError::LexiconMissing(req.category.clone()));
    }
    let rephraser = Rephraser::new(&req.description, sets);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &format!("{}\u{1f}{}", req.category, rephraser.original),
    ));
    let n = req.n_variants;
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 20 * n {
        attempts += 1;
        let candidate = rephraser.variant(&mut rng);
        if !out.contains(&candidate) {
            out.push(candidate);
        }
    }
    while out.len() < n {
        out.push(rephraser.variant(&mut rng));
    }
    Ok(out)
}
