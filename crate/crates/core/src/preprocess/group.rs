use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::PreprocessError;

/// A cleaned description ready for labeling or training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedExample {
    pub transaction_id: String,
    pub cleaned: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// Tokens sorted lexicographically, so word order does not matter.
    #[default]
    SortedTokens,
    /// Cleaned strings must match exactly.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionGroup {
    pub key: String,
    pub member_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default)]
    pub discard: bool,
}

pub fn group_key(cleaned: &str, mode: GroupMode) -> String {
    match mode {
        GroupMode::Exact => cleaned.to_string(),
        GroupMode::SortedTokens => {
            let mut tokens: Vec<&str> = cleaned.split(' ').collect();
            tokens.sort_unstable();
            tokens.join(" ")
        }
    }
}

/// Collapses equivalent cleaned descriptions. Groups appear in order of
/// their first member. Placeholder examples each form a singleton group
/// flagged `discard`. A group's label is the members' common label, or
/// `None` when members are unlabeled or disagree.
pub fn group(examples: &[CleanedExample], mode: GroupMode, placeholder: &str) -> Vec<DescriptionGroup> {
    let mut groups: Vec<DescriptionGroup> = Vec::new();
    let mut labels: Vec<Vec<Option<usize>>> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for ex in examples {
        if ex.cleaned == placeholder {
            groups.push(DescriptionGroup {
                key: ex.cleaned.clone(),
                member_ids: vec![ex.transaction_id.clone()],
                label: ex.label,
                discard: true,
            });
            labels.push(vec![ex.label]);
            continue;
        }
        let key = group_key(&ex.cleaned, mode);
        let slot = *by_key.entry(key.clone()).or_insert_with(|| {
            groups.push(DescriptionGroup {
                key,
                member_ids: Vec::new(),
                label: None,
                discard: false,
            });
            labels.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].member_ids.push(ex.transaction_id.clone());
        labels[slot].push(ex.label);
    }
    for (g, member_labels) in groups.iter_mut().zip(labels) {
        let first = member_labels[0];
        g.label = if member_labels.iter().all(|l| *l == first) {
            first
        } else {
            None
        };
    }
    groups
}

/// Assigns `label` to every example belonging to `group`.
pub fn propagate_label(
    group: &DescriptionGroup,
    label: usize,
    examples: &mut [CleanedExample],
) -> Result<(), PreprocessError> {
    if group.discard {
        return Err(PreprocessError::DiscardedGroup(group.key.clone()));
    }
    for ex in examples.iter_mut() {
        if group.member_ids.iter().any(|id| id == &ex.transaction_id) {
            ex.label = Some(label);
        }
    }
    Ok(())
}
