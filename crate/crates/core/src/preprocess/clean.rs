use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::PreprocessError;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_DOMAIN_TERMS: &str = include_str!("../../data/domain_terms.txt");
const DEFAULT_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

pub const DEFAULT_PLACEHOLDER: &str = "nodescription";

/// Rules applied by [`clean`]. Abbreviation keys are matched
/// case-insensitively against whole alphanumeric runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub abbreviation_map: BTreeMap<String, String>,
    pub stopwords: BTreeSet<String>,
    pub domain_terms: BTreeSet<String>,
    pub digit_token_min_len: usize,
    pub placeholder: String,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            abbreviation_map: parse_abbreviations(DEFAULT_ABBREVIATIONS)
                .expect("bundled abbreviation map parses"),
            stopwords: parse_token_list(DEFAULT_STOPWORDS),
            domain_terms: parse_token_list(DEFAULT_DOMAIN_TERMS),
            digit_token_min_len: 4,
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

impl CleanConfig {
    /// The bundled English stopword list.
    pub fn default_stopwords() -> BTreeSet<String> {
        parse_token_list(DEFAULT_STOPWORDS)
    }

    /// Checks that the placeholder is nonempty and is a fixed point of the
    /// cleaning rules.
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.placeholder.is_empty() {
            return Err(PreprocessError::InvalidConfig("placeholder is empty".into()));
        }
        match clean_tokens(&self.placeholder, self) {
            Some(ref s) if s == &self.placeholder => Ok(()),
            _ => Err(PreprocessError::InvalidConfig(format!(
                "placeholder {:?} does not survive cleaning",
                self.placeholder
            ))),
        }
    }

    pub fn load_abbreviations(&mut self, path: &Path) -> Result<(), PreprocessError> {
        let text = read(path)?;
        self.abbreviation_map = parse_abbreviations(&text)?;
        Ok(())
    }

    pub fn load_stopwords(&mut self, path: &Path) -> Result<(), PreprocessError> {
        self.stopwords = parse_token_list(&read(path)?);
        Ok(())
    }

    pub fn load_domain_terms(&mut self, path: &Path) -> Result<(), PreprocessError> {
        self.domain_terms = parse_token_list(&read(path)?);
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, PreprocessError> {
    std::fs::read_to_string(path).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One token per line; blank lines and `#` comments ignored.
pub fn parse_token_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// `key value` per line; blank lines and `#` comments ignored.
pub fn parse_abbreviations(text: &str) -> Result<BTreeMap<String, String>, PreprocessError> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) => {
                map.insert(k.to_lowercase(), v.to_string());
            }
            _ => {
                return Err(PreprocessError::InvalidConfig(format!(
                    "abbreviation line {}: expected `key value`, got {line:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(map)
}

/// Compatibility decomposition, combining marks stripped. Remaining non-ASCII
/// letters are dropped; other non-ASCII characters become spaces.
fn ascii_fold(raw: &str) -> String {
    raw.nfkd()
        .filter(|c| !is_combining_mark(*c))
        .filter_map(|c| {
            if c.is_ascii() {
                Some(c)
            } else if c.is_alphanumeric() {
                None
            } else {
                Some(' ')
            }
        })
        .collect()
}

fn replace_abbreviations(text: &str, map: &BTreeMap<String, String>) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if !run.is_empty() {
            match map.get(&run.to_ascii_lowercase()) {
                Some(replacement) => out.push_str(replacement),
                None => out.push_str(run),
            }
            run.clear();
        }
    };
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c);
        }
    }
    flush(&mut run, &mut out);
    out
}

fn keep_token(token: &str, config: &CleanConfig) -> bool {
    if token.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    if token.bytes().any(|b| b.is_ascii_digit()) && token.len() >= config.digit_token_min_len {
        return false;
    }
    !config.stopwords.contains(token) && !config.domain_terms.contains(token)
}

/// Rules 1-6 without placeholder substitution; `None` when nothing survives.
fn clean_tokens(raw: &str, config: &CleanConfig) -> Option<String> {
    let folded = ascii_fold(raw);
    let replaced = replace_abbreviations(&folded, &config.abbreviation_map);
    let lowered = replaced.to_ascii_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens: Vec<&str> = stripped
        .split_whitespace()
        .filter(|t| keep_token(t, config))
        .collect();
    if tokens.is_empty() {
        None
    } else {
        Some(tokens.join(" "))
    }
}

/// Normalizes a raw bank description into lowercase alphanumeric tokens
/// separated by single spaces, or the placeholder when nothing survives.
pub fn clean(raw: &str, config: &CleanConfig) -> String {
    clean_tokens(raw, config).unwrap_or_else(|| config.placeholder.clone())
}

/// True when `cleaned` matches `[a-z0-9]+( [a-z0-9]+)*`.
pub fn is_clean_alphabet(cleaned: &str) -> bool {
    !cleaned.is_empty()
        && cleaned.split(' ').all(|tok| {
            !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        })
}
