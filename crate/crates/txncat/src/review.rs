//! Review queue state and its write-ahead journal.
//!
//! The journal is append-only JSON lines. Each label decision is appended
//! and synced before it is applied in memory; on start-up the journal is
//! replayed, and an entry identical to the state it would produce is a
//! no-op, so replaying a journal twice yields the same state.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txncat_core::ingest::{CategorySet, Transaction};
use txncat_core::preprocess::{clean, CleanConfig};

use crate::pipeline::{PredictionRow, RowStatus};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("journal {path} is corrupt at byte offset {offset}: {reason}")]
    CorruptJournal { path: String, offset: u64, reason: String },
    #[error("journal {path}: {source}")]
    JournalIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no review item {0:?}")]
    UnknownItem(String),
    #[error("{0:?} is not a known category")]
    UnknownCategory(String),
    #[error("item {id:?} is already {status}; decisions cannot be changed")]
    AlreadyReviewed { id: String, status: &'static str },
    #[error("{0}")]
    InvalidDecision(String),
    #[error("prediction {0:?} has no matching transaction in the dataset")]
    OrphanPrediction(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Confirm,
    Correct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Unreviewed,
    Confirmed,
    Corrected,
}

impl ReviewStatus {
    fn as_str(self) -> &'static str {
        match self {
            ReviewStatus::Unreviewed => "unreviewed",
            ReviewStatus::Confirmed => "confirmed",
            ReviewStatus::Corrected => "corrected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub id: String,
    pub action: Action,
    pub label: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCategory {
    pub category: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub predicted: String,
    pub confidence: f64,
    /// Calibrated probabilities by category name.
    pub probs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub transaction: Transaction,
    pub cleaned: String,
    pub prediction: ItemPrediction,
    pub top2: Vec<ScoredCategory>,
    pub status: ReviewStatus,
    pub reviewer_label: Option<String>,
    pub reviewed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    #[default]
    ConfidenceAsc,
    ConfidenceDesc,
    DateAsc,
    DateDesc,
    Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusFilter {
    #[default]
    All,
    Unreviewed,
    Confirmed,
    Corrected,
    Reviewed,
}

impl StatusFilter {
    fn admits(self, s: ReviewStatus) -> bool {
        match self {
            StatusFilter::All => true,
            StatusFilter::Unreviewed => s == ReviewStatus::Unreviewed,
            StatusFilter::Confirmed => s == ReviewStatus::Confirmed,
            StatusFilter::Corrected => s == ReviewStatus::Corrected,
            StatusFilter::Reviewed => s != ReviewStatus::Unreviewed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Uniform,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ItemQuery {
    pub status: StatusFilter,
    /// Predicted category.
    pub category: Option<String>,
    pub min_confidence: Option<f64>,
    pub max_confidence: Option<f64>,
    pub sort: SortOrder,
    /// 1-based page number.
    pub page: Option<usize>,
    pub n: Option<usize>,
    /// `uniform` draws `n` items uniformly without replacement from the
    /// filtered set, ignoring `sort` and `page`.
    pub sample: Option<Sampling>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub reviewed: usize,
    pub total: usize,
    /// Share of reviewed items whose prediction was confirmed.
    pub agreement_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemPage {
    pub total: usize,
    pub page: usize,
    pub n: usize,
    pub items: Vec<ReviewItem>,
    pub progress: Progress,
}

pub const MAX_PAGE_SIZE: usize = 1000;

/// In-memory review state backed by the journal. All mutations go through
/// [`ReviewStore::submit`], which the server serializes behind one lock.
pub struct ReviewStore {
    categories: CategorySet,
    items: Vec<ReviewItem>,
    by_id: BTreeMap<String, usize>,
    journal_path: PathBuf,
    journal: File,
    default_page_size: usize,
    seed: u64,
}

impl std::fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewStore")
            .field("items", &self.items.len())
            .field("journal", &self.journal_path)
            .finish()
    }
}

fn parse_float(id: &str, what: &str, raw: &str) -> Result<f64, ReviewError> {
    raw.parse()
        .map_err(|_| ReviewError::InvalidDecision(format!("prediction {id:?}: bad {what} {raw:?}")))
}

/// Joins prediction rows with their transactions. Discarded rows are not
/// reviewable and are skipped.
pub fn build_items(
    transactions: &[Transaction],
    predictions: &[PredictionRow],
    categories: &CategorySet,
    clean_config: &CleanConfig,
) -> Result<Vec<ReviewItem>, ReviewError> {
    let by_id: BTreeMap<&str, &Transaction> = transactions.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut items = Vec::new();
    for row in predictions.iter().filter(|r| r.status == RowStatus::Scored) {
        let t = by_id
            .get(row.id.as_str())
            .ok_or_else(|| ReviewError::OrphanPrediction(row.id.clone()))?;
        let probs: Vec<f64> = row
            .probs
            .split('|')
            .map(|p| parse_float(&row.id, "probability", p))
            .collect::<Result<_, _>>()?;
        if probs.len() != categories.len() {
            return Err(ReviewError::InvalidDecision(format!(
                "prediction {:?} has {} probabilities for {} categories",
                row.id,
                probs.len(),
                categories.len()
            )));
        }
        let named: BTreeMap<String, f64> =
            categories.names().iter().cloned().zip(probs.iter().copied()).collect();
        let top2 = row
            .top2
            .split('|')
            .filter(|c| !c.is_empty())
            .map(|c| {
                let id = categories.id(c).ok_or_else(|| ReviewError::UnknownCategory(c.to_string()))?;
                Ok(ScoredCategory {
                    category: c.to_string(),
                    prob: probs[id],
                })
            })
            .collect::<Result<_, ReviewError>>()?;
        if categories.id(&row.pred).is_none() {
            return Err(ReviewError::UnknownCategory(row.pred.clone()));
        }
        items.push(ReviewItem {
            transaction: (*t).clone(),
            cleaned: clean(&t.raw_description, clean_config),
            prediction: ItemPrediction {
                predicted: row.pred.clone(),
                confidence: parse_float(&row.id, "confidence", &row.confidence)?,
                probs: named,
            },
            top2,
            status: ReviewStatus::Unreviewed,
            reviewer_label: None,
            reviewed_at: None,
        });
    }
    Ok(items)
}

enum Outcome {
    Applied,
    Unchanged,
}

impl ReviewStore {
    /// Builds the store and replays the journal at `journal_path`, creating
    /// it when absent. Entries naming items that are no longer in the queue
    /// are kept in the file but ignored.
    pub fn open(
        categories: CategorySet,
        items: Vec<ReviewItem>,
        journal_path: &Path,
        default_page_size: usize,
        seed: u64,
    ) -> Result<Self, ReviewError> {
        let path_str = journal_path.display().to_string();
        let io_err = |source| ReviewError::JournalIo { path: path_str.clone(), source };
        if let Some(dir) = journal_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let entries = if journal_path.exists() {
            read_journal(journal_path)?
        } else {
            Vec::new()
        };
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(journal_path)
            .map_err(io_err)?;
        let by_id = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.transaction.id.clone(), i))
            .collect();
        let mut store = ReviewStore {
            categories,
            items,
            by_id,
            journal_path: journal_path.to_path_buf(),
            journal,
            default_page_size: default_page_size.clamp(1, MAX_PAGE_SIZE),
            seed,
        };
        for (offset, entry) in entries {
            match store.apply(&entry) {
                Ok(_) | Err(ReviewError::UnknownItem(_)) => {}
                Err(e) => {
                    return Err(ReviewError::CorruptJournal {
                        path: store.journal_path.display().to_string(),
                        offset,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(store)
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&ReviewItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    fn check(&self, id: &str, action: Action, label: &str) -> Result<Outcome, ReviewError> {
        let item = self.get(id).ok_or_else(|| ReviewError::UnknownItem(id.to_string()))?;
        if self.categories.id(label).is_none() {
            return Err(ReviewError::UnknownCategory(label.to_string()));
        }
        let predicted = item.prediction.predicted.as_str();
        let target = match action {
            Action::Confirm if label != predicted => {
                return Err(ReviewError::InvalidDecision(format!(
                    "confirm must use the predicted label {predicted:?}, got {label:?}"
                )))
            }
            Action::Correct if label == predicted => {
                return Err(ReviewError::InvalidDecision(format!(
                    "correct needs a label other than the predicted {predicted:?}"
                )))
            }
            Action::Confirm => ReviewStatus::Confirmed,
            Action::Correct => ReviewStatus::Corrected,
        };
        match item.status {
            ReviewStatus::Unreviewed => Ok(Outcome::Applied),
            s if s == target && item.reviewer_label.as_deref() == Some(label) => Ok(Outcome::Unchanged),
            s => Err(ReviewError::AlreadyReviewed {
                id: id.to_string(),
                status: s.as_str(),
            }),
        }
    }

    fn apply(&mut self, entry: &JournalEntry) -> Result<Outcome, ReviewError> {
        let outcome = self.check(&entry.id, entry.action, &entry.label)?;
        if let Outcome::Applied = outcome {
            let item = &mut self.items[self.by_id[&entry.id]];
            item.status = match entry.action {
                Action::Confirm => ReviewStatus::Confirmed,
                Action::Correct => ReviewStatus::Corrected,
            };
            item.reviewer_label = Some(entry.label.clone());
            item.reviewed_at = Some(entry.at);
        }
        Ok(outcome)
    }

    /// Validates, journals (append + sync) and applies one decision. A
    /// repeat of the decision already recorded succeeds without writing.
    pub fn submit(&mut self, id: &str, action: Action, label: Option<&str>) -> Result<&ReviewItem, ReviewError> {
        let item = self.get(id).ok_or_else(|| ReviewError::UnknownItem(id.to_string()))?;
        let label = match (action, label) {
            (_, Some(l)) => l.to_string(),
            (Action::Confirm, None) => item.prediction.predicted.clone(),
            (Action::Correct, None) => {
                return Err(ReviewError::InvalidDecision("correct requires a label".into()))
            }
        };
        if let Outcome::Applied = self.check(id, action, &label)? {
            let entry = JournalEntry {
                id: id.to_string(),
                action,
                label,
                at: Utc::now(),
            };
            let mut line = serde_json::to_string(&entry).expect("journal entry serializes");
            line.push('\n');
            let io_err = |source| ReviewError::JournalIo {
                path: self.journal_path.display().to_string(),
                source,
            };
            self.journal.write_all(line.as_bytes()).map_err(io_err)?;
            self.journal.sync_data().map_err(io_err)?;
            self.apply(&entry)?;
        }
        Ok(self.get(id).expect("checked above"))
    }

    /// Replaces the scored items (after a retrain), keeping every decision
    /// recorded for ids still present.
    pub fn replace_items(&mut self, items: Vec<ReviewItem>) {
        let decisions: BTreeMap<String, (ReviewStatus, Option<String>, Option<DateTime<Utc>>)> = self
            .items
            .iter()
            .filter(|i| i.status != ReviewStatus::Unreviewed)
            .map(|i| (i.transaction.id.clone(), (i.status, i.reviewer_label.clone(), i.reviewed_at)))
            .collect();
        self.items = items;
        for item in &mut self.items {
            if let Some((status, label, at)) = decisions.get(&item.transaction.id) {
                item.status = *status;
                item.reviewer_label = label.clone();
                item.reviewed_at = *at;
            }
        }
        self.by_id = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.transaction.id.clone(), i))
            .collect();
    }

    pub fn progress(&self) -> Progress {
        let reviewed: Vec<&ReviewItem> = self.items.iter().filter(|i| i.status != ReviewStatus::Unreviewed).collect();
        let confirmed = reviewed.iter().filter(|i| i.status == ReviewStatus::Confirmed).count();
        Progress {
            reviewed: reviewed.len(),
            total: self.items.len(),
            agreement_rate: (!reviewed.is_empty()).then(|| confirmed as f64 / reviewed.len() as f64),
        }
    }

    pub fn query(&self, q: &ItemQuery) -> Result<ItemPage, ReviewError> {
        if let Some(c) = &q.category {
            if self.categories.id(c).is_none() {
                return Err(ReviewError::UnknownCategory(c.clone()));
            }
        }
        let n = q.n.unwrap_or(self.default_page_size);
        if n == 0 || n > MAX_PAGE_SIZE {
            return Err(ReviewError::InvalidQuery(format!("n must be between 1 and {MAX_PAGE_SIZE}")));
        }
        let mut selected: Vec<&ReviewItem> = self
            .items
            .iter()
            .filter(|i| q.status.admits(i.status))
            .filter(|i| q.category.as_deref().is_none_or(|c| i.prediction.predicted == c))
            .filter(|i| q.min_confidence.is_none_or(|m| i.prediction.confidence >= m))
            .filter(|i| q.max_confidence.is_none_or(|m| i.prediction.confidence <= m))
            .collect();
        let total = selected.len();
        let page = q.page.unwrap_or(1);
        if page == 0 {
            return Err(ReviewError::InvalidQuery("page numbers start at 1".into()));
        }
        let items: Vec<ReviewItem> = match q.sample {
            Some(Sampling::Uniform) => {
                selected.sort_by(|a, b| a.transaction.id.cmp(&b.transaction.id));
                let mut rng = ChaCha8Rng::seed_from_u64(q.seed.unwrap_or(self.seed));
                selected.choose_multiple(&mut rng, n.min(total)).map(|i| (*i).clone()).collect()
            }
            None => {
                let by_id = |a: &&ReviewItem, b: &&ReviewItem| a.transaction.id.cmp(&b.transaction.id);
                let conf = |a: &&ReviewItem, b: &&ReviewItem| a.prediction.confidence.total_cmp(&b.prediction.confidence);
                match q.sort {
                    SortOrder::ConfidenceAsc => selected.sort_by(|a, b| conf(a, b).then(by_id(a, b))),
                    SortOrder::ConfidenceDesc => selected.sort_by(|a, b| conf(b, a).then(by_id(a, b))),
                    SortOrder::DateAsc => selected.sort_by(|a, b| a.transaction.date.cmp(&b.transaction.date).then(by_id(a, b))),
                    SortOrder::DateDesc => selected.sort_by(|a, b| b.transaction.date.cmp(&a.transaction.date).then(by_id(a, b))),
                    SortOrder::Id => selected.sort_by(by_id),
                }
                selected.into_iter().skip((page - 1) * n).take(n).cloned().collect()
            }
        };
        Ok(ItemPage {
            total,
            page,
            n,
            items,
            progress: self.progress(),
        })
    }

    /// Reviewed transactions with the reviewer's label, in id order.
    pub fn reviewed_labels(&self) -> Vec<(Transaction, String)> {
        let mut out: Vec<(Transaction, String)> = self
            .items
            .iter()
            .filter_map(|i| i.reviewer_label.clone().map(|l| (i.transaction.clone(), l)))
            .collect();
        out.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        out
    }
}

/// Parses every journal line, reporting the byte offset of the first line
/// that is not a complete, well-formed entry.
pub fn read_journal(path: &Path) -> Result<Vec<(u64, JournalEntry)>, ReviewError> {
    let path_str = path.display().to_string();
    let file = File::open(path).map_err(|source| ReviewError::JournalIo { path: path_str.clone(), source })?;
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|source| ReviewError::JournalIo { path: path_str.clone(), source })?;
        if read == 0 {
            break;
        }
        let corrupt = |reason: String| ReviewError::CorruptJournal {
            path: path_str.clone(),
            offset,
            reason,
        };
        if !line.ends_with('\n') {
            return Err(corrupt("truncated final entry".into()));
        }
        if !line.trim().is_empty() {
            let entry: JournalEntry = serde_json::from_str(line.trim_end()).map_err(|e| corrupt(e.to_string()))?;
            entries.push((offset, entry));
        }
        offset += read as u64;
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use txncat_core::ingest::Amount;

    fn store(dir: &Path) -> ReviewStore {
        let categories = CategorySet::new(["rent", "tax", "travel"]).unwrap();
        let items = ["a", "b", "c"]
            .iter()
            .zip([0.9, 0.3, 0.6])
            .map(|(id, conf)| ReviewItem {
                transaction: Transaction {
                    id: id.to_string(),
                    date: NaiveDate::from_ymd_opt(2024, 5, 1).unwrap(),
                    amount: Amount(-100),
                    raw_description: "x".into(),
                    label: None,
                    company: None,
                    extra: BTreeMap::new(),
                },
                cleaned: "x".into(),
                prediction: ItemPrediction {
                    predicted: "tax".into(),
                    confidence: conf,
                    probs: BTreeMap::new(),
                },
                top2: Vec::new(),
                status: ReviewStatus::Unreviewed,
                reviewer_label: None,
                reviewed_at: None,
            })
            .collect();
        ReviewStore::open(categories, items, &dir.join("journal.jsonl"), 50, 1).unwrap()
    }

    #[test]
    fn transitions_are_forward_only_and_repeats_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path());
        s.submit("a", Action::Confirm, None).unwrap();
        s.submit("a", Action::Confirm, Some("tax")).unwrap();
        assert!(matches!(
            s.submit("a", Action::Correct, Some("rent")),
            Err(ReviewError::AlreadyReviewed { .. })
        ));
        assert!(matches!(
            s.submit("b", Action::Correct, Some("tax")),
            Err(ReviewError::InvalidDecision(_))
        ));
        assert!(matches!(
            s.submit("b", Action::Confirm, Some("rent")),
            Err(ReviewError::InvalidDecision(_))
        ));
        s.submit("b", Action::Correct, Some("rent")).unwrap();
        let lines = std::fs::read_to_string(dir.path().join("journal.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = store(dir.path());
            s.submit("c", Action::Correct, Some("travel")).unwrap();
        }
        let s = store(dir.path());
        let c = s.get("c").unwrap();
        assert_eq!(c.status, ReviewStatus::Corrected);
        assert_eq!(c.reviewer_label.as_deref(), Some("travel"));
        assert_eq!(s.progress().reviewed, 1);
        assert_eq!(s.progress().agreement_rate, Some(0.0));
    }

    #[test]
    fn duplicated_journal_lines_replay_to_same_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = store(dir.path());
            s.submit("a", Action::Confirm, None).unwrap();
        }
        let path = dir.path().join("journal.jsonl");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("{text}{text}")).unwrap();
        let s = store(dir.path());
        assert_eq!(s.reviewed_labels().len(), 1);
    }

    #[test]
    fn corrupt_journal_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = store(dir.path());
            s.submit("a", Action::Confirm, None).unwrap();
        }
        let path = dir.path().join("journal.jsonl");
        let good = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("{good}{{\"id\":\"b\",\"act")).unwrap();
        let categories = CategorySet::new(["tax"]).unwrap();
        let err = ReviewStore::open(categories, Vec::new(), &path, 50, 1).unwrap_err();
        match err {
            ReviewError::CorruptJournal { offset, .. } => assert_eq!(offset, good.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_sort_is_lowest_confidence_first() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let page = s.query(&ItemQuery::default()).unwrap();
        let ids: Vec<&str> = page.items.iter().map(|i| i.transaction.id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn uniform_sample_is_seeded_and_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let q = ItemQuery {
            sample: Some(Sampling::Uniform),
            n: Some(2),
            seed: Some(9),
            ..ItemQuery::default()
        };
        let a = s.query(&q).unwrap();
        let b = s.query(&q).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.items.len(), 2);
        assert_ne!(a.items[0].transaction.id, a.items[1].transaction.id);
    }
}
