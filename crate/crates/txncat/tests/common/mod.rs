//! Deterministic synthetic SME transaction corpus for end-to-end tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txncat_core::augment::Lexicon;
use txncat_core::ingest::{Amount, CategorySet, Transaction};

/// Class sizes of the published real-data category breakdown.
pub const CLASS_SIZES: [(&str, usize); 11] = [
    ("suppliers", 565),
    ("payroll", 460),
    ("sundries", 177),
    ("software", 160),
    ("travel", 137),
    ("tax", 104),
    ("utilities", 97),
    ("marketing", 84),
    ("inventory", 52),
    ("debt", 34),
    ("rent", 27),
];

const DESCRIPTORS: [(&str, &[&str]); 11] = [
    ("suppliers", &["wholesale", "supplies", "trade", "distributors"]),
    ("payroll", &["salary", "wages", "payroll", "consultancy"]),
    ("sundries", &["misc", "sundry", "shop", "store"]),
    ("software", &["subscription", "licence", "cloud", "saas"]),
    ("travel", &["rail", "taxi", "flight", "hotel"]),
    ("tax", &["hmrc", "vat", "paye", "corporation"]),
    ("utilities", &["energy", "water", "waste", "broadband"]),
    ("marketing", &["ads", "advertising", "promo", "media"]),
    ("inventory", &["stock", "goods", "warehouse", "parts"]),
    ("debt", &["loan", "repayment", "finance", "instalment"]),
    ("rent", &["rent", "lease", "property", "premises"]),
];

/// Shared across categories, so they carry no label signal.
const NOISE: [&str; 10] = [
    "payment", "online", "card", "purchase", "services", "uk", "direct", "international", "bill",
    "account",
];
const GENERIC_MERCHANTS: [&str; 5] = ["amazon", "paypal", "stripe", "sumup", "worldpay"];
const MONTHS: [&str; 12] = [
    "JAN", "FEB", "MAR", "APR", "MAY", "JUN", "JUL", "AUG", "SEP", "OCT", "NOV", "DEC",
];
const COMPANIES: [&str; 4] = ["sme-alpha", "sme-beta", "sme-gamma", "sme-delta"];
const MERCHANTS_PER_CATEGORY: usize = 16;

pub struct Corpus {
    pub transactions: Vec<Transaction>,
    pub categories: CategorySet,
    pub lexicon: Lexicon,
    /// Merchant pool per category, most frequent first.
    pub merchants: BTreeMap<String, Vec<String>>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 16] = [
        "b", "br", "c", "d", "f", "g", "gr", "k", "l", "m", "n", "p", "r", "s", "t", "v",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ou"];
    const CODAS: [&str; 8] = ["", "n", "r", "x", "l", "s", "m", "k"];
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap(),
                CODAS.choose(rng).unwrap()
            )
        })
        .collect()
}

/// Builds the corpus with the given class sizes. Merchants within a
/// category follow a 1/rank frequency law, so small classes see only a few
/// of their merchants; the lexicon lists every merchant.
pub fn corpus_with_sizes(sizes: &[(&str, usize)], seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: BTreeSet<String> = NOISE
        .iter()
        .chain(GENERIC_MERCHANTS.iter())
        .map(|s| s.to_string())
        .collect();
    for (_, words) in DESCRIPTORS {
        used.extend(words.iter().map(|w| w.to_string()));
    }
    let mut merchants = BTreeMap::new();
    for (name, _) in sizes {
        let mut pool = Vec::new();
        while pool.len() < MERCHANTS_PER_CATEGORY {
            let w = pseudo_word(&mut rng);
            if w.len() >= 4 && used.insert(w.clone()) {
                pool.push(w);
            }
        }
        merchants.insert(name.to_string(), pool);
    }

    let descriptors: BTreeMap<&str, &[&str]> = DESCRIPTORS.iter().copied().collect();
    let weights: Vec<f64> = (0..MERCHANTS_PER_CATEGORY).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let total_w: f64 = weights.iter().sum();
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();

    let mut transactions = Vec::new();
    for (name, n) in sizes {
        let pool = &merchants[*name];
        let words = descriptors.get(name).copied().unwrap_or(&["general"]);
        for _ in 0..*n {
            let mut tokens: Vec<String> = Vec::new();
            if rng.gen_bool(0.2) {
                tokens.push(GENERIC_MERCHANTS.choose(&mut rng).unwrap().to_string());
            } else {
                let mut u = rng.gen::<f64>() * total_w;
                let mut pick = 0;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                tokens.push(pool[pick].clone());
            }
            if rng.gen_bool(0.35) {
                tokens.push(words.choose(&mut rng).unwrap().to_string());
            }
            for _ in 0..rng.gen_range(0..=2) {
                tokens.push(NOISE.choose(&mut rng).unwrap().to_string());
            }
            if rng.gen_bool(0.5) {
                tokens.push(format!("REF {}", rng.gen_range(10_000..99_999)));
            }
            if rng.gen_bool(0.3) {
                tokens.push(format!("{}2024", MONTHS.choose(&mut rng).unwrap()));
            }
            if rng.gen_bool(0.2) {
                tokens.push(["FT", "DD", "POS", "BBP"].choose(&mut rng).unwrap().to_string());
            }
            if rng.gen_bool(0.3) {
                tokens.push(format!("{}{}", (b'a' + rng.gen_range(0..26)) as char, rng.gen_range(10..99)));
            }
            tokens.push("LTD".into());
            tokens.retain(|t| t != "LTD" || rng.gen_bool(0.3));
            let raw = if rng.gen_bool(0.7) {
                tokens.join(" ").to_uppercase()
            } else {
                tokens.join(" ")
            };
            let pence: i64 = rng.gen_range(-250_000..-100);
            let id = format!("t{:05}", transactions.len());
            transactions.push(Transaction {
                id,
                date: start + chrono::Duration::days(rng.gen_range(0..365)),
                amount: Amount(pence),
                raw_description: raw,
                label: Some(name.to_string()),
                company: Some(COMPANIES.choose(&mut rng).unwrap().to_string()),
                extra: BTreeMap::new(),
            });
        }
    }
    // Interleave categories so file order carries no label information.
    transactions.shuffle(&mut rng);

    let mut names: Vec<String> = sizes.iter().map(|(n, _)| n.to_string()).collect();
    names.sort();
    let categories = CategorySet::new(names).unwrap();
    let lexicon_map: BTreeMap<String, Vec<Vec<String>>> = merchants
        .iter()
        .map(|(name, pool)| {
            let words = descriptors
                .get(name.as_str())
                .map(|w| w.iter().map(|s| s.to_string()).collect())
                .unwrap_or_default();
            (name.clone(), vec![pool.clone(), words])
        })
        .collect();
    Corpus {
        transactions,
        categories,
        lexicon: Lexicon::new(lexicon_map).unwrap(),
        merchants,
    }
}

pub fn desk_corpus(seed: u64) -> Corpus {
    corpus_with_sizes(&CLASS_SIZES, seed)
}
