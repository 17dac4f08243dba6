use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AugmentError;

/// Per-category overrides. A `targets` entry fixes the synthetic target
/// directly and wins over a `ratios` entry for the same category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceOverrides {
    pub ratios: BTreeMap<String, f64>,
    pub targets: BTreeMap<String, usize>,
}

impl BalanceOverrides {
    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let overrides: BalanceOverrides =
            toml::from_str(text).map_err(|e| AugmentError::InvalidOverrides(e.to_string()))?;
        if let Some((name, r)) = overrides.ratios.iter().find(|(_, r)| !(**r >= 1.0)) {
            return Err(AugmentError::InvalidOverrides(format!(
                "ratio for {name:?} must be at least 1, got {r}"
            )));
        }
        Ok(overrides)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty() && self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// `None` means the largest real count.
    pub ref_count: Option<usize>,
    pub ratio_cap: f64,
    pub overrides: BalanceOverrides,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            ref_count: None,
            ratio_cap: 30.0,
            overrides: BalanceOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub real_count: usize,
    pub ratio: f64,
    /// Size of the category after augmentation, real examples included.
    pub synthetic_target: usize,
}

impl PlanEntry {
    /// Number of new examples to generate.
    pub fn to_generate(&self) -> usize {
        self.synthetic_target.saturating_sub(self.real_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub per_category: BTreeMap<String, PlanEntry>,
}

impl BalancePlan {
    pub fn total_target(&self) -> usize {
        self.per_category.values().map(|e| e.synthetic_target).sum()
    }

    pub fn total_to_generate(&self) -> usize {
        self.per_category.values().map(PlanEntry::to_generate).sum()
    }

    pub fn get(&self, category: &str) -> Option<&PlanEntry> {
        self.per_category.get(category)
    }
}

pub fn build_balance_plan(
    real_counts: &BTreeMap<String, usize>,
    config: &BalanceConfig,
) -> Result<BalancePlan, AugmentError> {
    if !(config.ratio_cap >= 1.0) {
        return Err(AugmentError::InvalidOverrides(format!(
            "ratio_cap must be at least 1, got {}",
            config.ratio_cap
        )));
    }
    let reference = config
        .ref_count
        .unwrap_or_else(|| real_counts.values().copied().max().unwrap_or(0));
    let mut per_category = BTreeMap::new();
    for (name, &n) in real_counts {
        let entry = if let Some(&target) = config.overrides.targets.get(name) {
            let ratio = if n == 0 { f64::INFINITY } else { target as f64 / n as f64 };
            PlanEntry {
                real_count: n,
                ratio,
                synthetic_target: target,
            }
        } else {
            let ratio = match config.overrides.ratios.get(name) {
                Some(&r) => r,
                None if n == 0 => return Err(AugmentError::ZeroCount(name.clone())),
                None => (reference as f64 / n as f64).round().max(1.0).min(config.ratio_cap),
            };
            PlanEntry {
                real_count: n,
                ratio,
                synthetic_target: (ratio * n as f64).round() as usize,
            }
        };
        per_category.insert(name.clone(), entry);
    }
    Ok(BalancePlan { per_category })
}

/// Splits `total` across groups in proportion to `sizes` (floor of the
/// exact share), then hands the remainder out one at a time to the largest
/// groups, ties going to the earlier group.
pub fn allocate_proportional(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes
        .iter()
        .map(|&s| ((total as u128 * s as u128) / sum as u128) as usize)
        .collect();
    let mut remainder = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut cursor = 0;
    while remainder > 0 {
        alloc[order[cursor % order.len()]] += 1;
        cursor += 1;
        remainder -= 1;
    }
    alloc
}
