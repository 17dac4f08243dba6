use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use proptest::prelude::*;
use txncat::review::{Action, ItemPrediction, ItemQuery, ReviewItem, ReviewStatus, ReviewStore, StatusFilter};
use txncat_core::ingest::{Amount, CategorySet, Transaction};

const CATEGORIES: [&str; 4] = ["debt", "rent", "tax", "travel"];

fn items(confidences: &[f64]) -> Vec<ReviewItem> {
    confidences
        .iter()
        .enumerate()
        .map(|(i, &conf)| ReviewItem {
            transaction: Transaction {
                id: format!("t{i:03}"),
                date: NaiveDate::from_ymd_opt(2024, 1, 1 + (i % 28) as u32).unwrap(),
                amount: Amount(-(i as i64) * 100),
                raw_description: format!("ROW {i}"),
                label: None,
                company: None,
                extra: BTreeMap::new(),
            },
            cleaned: format!("row {i}"),
            prediction: ItemPrediction {
                predicted: CATEGORIES[i % CATEGORIES.len()].to_string(),
                confidence: conf,
                probs: BTreeMap::new(),
            },
            top2: Vec::new(),
            status: ReviewStatus::Unreviewed,
            reviewer_label: None,
            reviewed_at: None,
        })
        .collect()
}

fn open(journal: &Path, confidences: &[f64]) -> ReviewStore {
    ReviewStore::open(CategorySet::new(CATEGORIES).unwrap(), items(confidences), journal, 50, 7).unwrap()
}

fn snapshot(store: &ReviewStore) -> Vec<(String, ReviewStatus, Option<String>)> {
    store
        .items()
        .iter()
        .map(|i| (i.transaction.id.clone(), i.status, i.reviewer_label.clone()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Replaying the journal rebuilds exactly the live state, whatever mix
    /// of accepted, repeated and rejected decisions produced it.
    #[test]
    fn journal_replay_matches_live_state(
        confidences in prop::collection::vec(0.0f64..1.0, 1..12),
        ops in prop::collection::vec((0usize..12, any::<bool>(), 0usize..4), 0..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.jsonl");
        let mut live = open(&journal, &confidences);
        let mut accepted = 0usize;
        for (idx, confirm, label) in ops {
            let id = format!("t{:03}", idx % confidences.len());
            let action = if confirm { Action::Confirm } else { Action::Correct };
            let label = (!confirm).then_some(CATEGORIES[label]);
            let before = live.progress().reviewed;
            if live.submit(&id, action, label).is_ok() && live.progress().reviewed > before {
                accepted += 1;
            }
        }
        let lines = std::fs::read_to_string(&journal).unwrap().lines().count();
        prop_assert_eq!(lines, accepted);
        let replayed = open(&journal, &confidences);
        prop_assert_eq!(snapshot(&replayed), snapshot(&live));
        prop_assert_eq!(replayed.progress(), live.progress());
    }

    /// The unreviewed queue is sorted by confidence and is exactly the
    /// complement of the reviewed set.
    #[test]
    fn unreviewed_queue_is_sorted_complement(
        confidences in prop::collection::vec(0.0f64..1.0, 1..30),
        reviewed in prop::collection::btree_set(0usize..30, 0..10),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(&dir.path().join("journal.jsonl"), &confidences);
        for idx in reviewed.iter().filter(|&&i| i < confidences.len()) {
            store.submit(&format!("t{idx:03}"), Action::Confirm, None).unwrap();
        }
        let q = ItemQuery { status: StatusFilter::Unreviewed, n: Some(1000), ..ItemQuery::default() };
        let page = store.query(&q).unwrap();
        let conf: Vec<f64> = page.items.iter().map(|i| i.prediction.confidence).collect();
        prop_assert!(conf.windows(2).all(|w| w[0] <= w[1]));
        let n_reviewed = reviewed.iter().filter(|&&i| i < confidences.len()).count();
        prop_assert_eq!(page.total, confidences.len() - n_reviewed);
        prop_assert!(page.items.iter().all(|i| i.status == ReviewStatus::Unreviewed));
    }
}
