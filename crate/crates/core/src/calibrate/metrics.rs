use std::io::Write;

use serde::{Deserialize, Serialize};

use super::CalibrateError;
use crate::util::argmax;

const ROW_SUM_TOLERANCE: f64 = 1e-6;
const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub empirical_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub nll: f64,
}

fn validate(probs: &[Vec<f64>], labels: &[usize]) -> Result<(), CalibrateError> {
    if probs.is_empty() {
        return Err(CalibrateError::EmptyInput);
    }
    if probs.len() != labels.len() {
        return Err(CalibrateError::LengthMismatch {
            rows: probs.len(),
            labels: labels.len(),
        });
    }
    let k = probs[0].len();
    for (row, (p, &y)) in probs.iter().zip(labels).enumerate() {
        if p.len() != k {
            return Err(CalibrateError::RaggedRow { row });
        }
        if y >= k {
            return Err(CalibrateError::InvalidLabel { row, label: y });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CalibrateError::NotAProbability { row, sum });
        }
    }
    Ok(())
}

/// Bin number (0-based) for a confidence on `(0, 1]`: `ceil(c * n_bins) - 1`,
/// with `c = 0` going to the first bin.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let b = (confidence * n_bins as f64).ceil() as usize;
    b.clamp(1, n_bins) - 1
}

pub fn reliability(
    probs: &[Vec<f64>],
    labels: &[usize],
    n_bins: usize,
) -> Result<ReliabilityTable, CalibrateError> {
    validate(probs, labels)?;
    if n_bins == 0 {
        return Err(CalibrateError::InvalidBins);
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (p, &y) in probs.iter().zip(labels) {
        let predicted = argmax(p);
        let confidence = p[predicted];
        let b = bin_index(confidence, n_bins);
        counts[b] += 1;
        conf_sum[b] += confidence;
        if predicted == y {
            correct[b] += 1;
        }
    }
    let n = probs.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_confidence, empirical_accuracy) = if counts[b] == 0 {
                (None, None)
            } else {
                let c = counts[b] as f64;
                let mc = conf_sum[b] / c;
                let acc = correct[b] as f64 / c;
                ece += (c / n) * (mc - acc).abs();
                (Some(mc), Some(acc))
            };
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: counts[b],
                mean_confidence,
                empirical_accuracy,
            }
        })
        .collect();
    Ok(ReliabilityTable {
        bins,
        ece,
        nll: nll_unchecked(probs, labels),
    })
}

/// Expected calibration error over equal-width confidence bins.
pub fn ece(probs: &[Vec<f64>], labels: &[usize], n_bins: usize) -> Result<f64, CalibrateError> {
    Ok(reliability(probs, labels, n_bins)?.ece)
}

fn nll_unchecked(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(NLL_FLOOR).ln())
        .sum::<f64>()
        / probs.len() as f64
}

/// Mean `-ln p(true label)`, probabilities floored at 1e-12.
pub fn nll(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64, CalibrateError> {
    validate(probs, labels)?;
    Ok(nll_unchecked(probs, labels))
}

impl ReliabilityTable {
    /// `bin_lo,bin_hi,count,mean_conf,acc`; empty bins leave the last two
    /// fields blank.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count,mean_conf,acc")?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for bin in &self.bins {
            writeln!(
                out,
                "{:.4},{:.4},{},{},{}",
                bin.lo,
                bin.hi,
                bin.count,
                fmt(bin.mean_confidence),
                fmt(bin.empirical_accuracy)
            )?;
        }
        Ok(())
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// ECE recomputed from occupied bins only.
    pub fn ece_from_occupied_bins(&self) -> f64 {
        let n = self.total_count() as f64;
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| {
                let mc = b.mean_confidence.unwrap_or(0.0);
                let acc = b.empirical_accuracy.unwrap_or(0.0);
                (b.count as f64 / n) * (mc - acc).abs()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_confident_predictions() {
        let probs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(ece(&probs, &[0, 1], 10).unwrap(), 0.0);
        assert_eq!(nll(&probs, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn two_samples_one_correct() {
        let probs = vec![vec![0.9, 0.1], vec![0.9, 0.1]];
        let table = reliability(&probs, &[0, 1], 10).unwrap();
        assert!((table.ece - 0.4).abs() < 1e-12);
        let occupied: Vec<_> = table.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].count, 2);
        assert!((occupied[0].hi - 0.9).abs() < 1e-12);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.55, 10), 5);
    }

    /// Confidence drawn uniformly on [1/K, 1]; correctness drawn with that
    /// probability, so every bin's accuracy tracks its mean confidence.
    #[test]
    fn calibrated_monte_carlo_has_small_ece() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 4;
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10_000 {
            let conf: f64 = rng.gen_range(0.26..1.0);
            let rest = (1.0 - conf) / (k - 1) as f64;
            let mut row = vec![rest; k];
            row[0] = conf;
            probs.push(row);
            labels.push(if rng.gen::<f64>() < conf { 0 } else { 1 });
        }
        assert!(ece(&probs, &labels, 10).unwrap() < 0.02);
    }

    #[test]
    fn nll_cases() {
        let uniform = vec![vec![0.25; 4]; 3];
        assert!((nll(&uniform, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let rows = vec![vec![0.8, 0.2], vec![0.6, 0.4]];
        let expected = (-(0.8f64.ln()) - 0.4f64.ln()) / 2.0;
        assert!((nll(&rows, &[0, 1]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.569717).abs() < 1e-6);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(ece(&[], &[], 10), Err(CalibrateError::EmptyInput)));
        assert!(matches!(nll(&[], &[]), Err(CalibrateError::EmptyInput)));
        assert!(matches!(
            ece(&[vec![0.5, 0.6]], &[0], 10),
            Err(CalibrateError::NotAProbability { row: 0, .. })
        ));
    }

    #[test]
    fn csv_export_layout() {
        let probs = vec![vec![0.9, 0.1], vec![0.9, 0.1]];
        let table = reliability(&probs, &[0, 1], 2).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "bin_lo,bin_hi,count,mean_conf,acc\n0.0000,0.5000,0,,\n0.5000,1.0000,2,0.900000,0.500000\n"
        );
    }

    fn prob_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        prop::collection::vec((prop::collection::vec(0.01f64..1.0, 3), 0usize..3), 1..60).prop_map(
            |rows| {
                rows.into_iter()
                    .map(|(raw, y)| {
                        let s: f64 = raw.iter().sum();
                        (raw.iter().map(|v| v / s).collect::<Vec<f64>>(), y)
                    })
                    .unzip()
            },
        )
    }

    proptest! {
        #[test]
        fn ece_ignores_sample_order((probs, labels) in prob_rows(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<Vec<f64>> = order.iter().map(|&i| probs[i].clone()).collect();
            let l2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let a = ece(&probs, &labels, 10).unwrap();
            let b = ece(&p2, &l2, 10).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn bins_cover_all_samples((probs, labels) in prob_rows()) {
            let table = reliability(&probs, &labels, 10).unwrap();
            prop_assert_eq!(table.total_count(), probs.len());
            prop_assert!((table.ece_from_occupied_bins() - table.ece).abs() < 1e-12);
            for w in table.bins.windows(2) {
                prop_assert!((w[0].hi - w[1].lo).abs() < 1e-12);
            }
            prop_assert_eq!(table.bins[0].lo, 0.0);
            prop_assert_eq!(table.bins.last().unwrap().hi, 1.0);
        }
    }
}
