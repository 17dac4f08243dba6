use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{
    conf_gated_accuracy, distribution_gap, label_distribution, macro_recall, per_class_recall,
    standard_accuracy, top_fraction_accuracy, top_k_accuracy, LabelSource, Prediction,
};
use super::stats::{paired_ttest, PairedTTest};
use super::EvaluateError;
use crate::augment::{augment_examples, AugmentConfig, VariantGenerator};
use crate::calibrate::{
    calibrated_proba, fit_calibration, reliability, CalibrationConfig, CalibrationParams,
};
use crate::ingest::{split_train_calibration, stratified_kfold, CategorySet, Transaction};
use crate::model::{fit_tfidf, softmax, train, SparseVector, TfidfConfig, TrainConfig};
use crate::preprocess::{clean, CleanConfig, CleanedExample};
use crate::util::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub calibration_fraction: f64,
    pub tfidf: TfidfConfig,
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub n_bins: usize,
    pub high_conf_threshold: f64,
    pub top_fractions: Vec<f64>,
    pub top_k: usize,
    /// Generate synthetic examples for each training portion.
    pub augment: bool,
    pub augment_config: AugmentConfig,
    /// Folds cover this company's rows only; everyone else's rows are
    /// added to every training portion.
    pub holdout_company: Option<String>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 42,
            calibration_fraction: 0.15,
            tfidf: TfidfConfig::default(),
            train: TrainConfig::default(),
            calibration: CalibrationConfig::default(),
            n_bins: 10,
            high_conf_threshold: 0.8,
            top_fractions: vec![0.1, 0.5],
            top_k: 2,
            augment: false,
            augment_config: AugmentConfig::default(),
            holdout_company: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFraction {
    pub q: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub standard_acc: f64,
    /// `None` when no prediction clears the confidence threshold.
    pub high_conf_acc: Option<f64>,
    pub high_conf_coverage: f64,
    pub n_high_conf: usize,
    pub top_fraction_acc: Vec<TopFraction>,
    pub top_k: usize,
    pub top_k_acc: f64,
    pub ece: f64,
    pub nll: f64,
    pub predicted_distribution: Vec<f64>,
    pub tv_distance: f64,
    pub per_class_recall: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub n: usize,
    pub n_train_real: usize,
    pub n_calibration: usize,
    pub n_synthetic: usize,
    pub target_distribution: Vec<f64>,
    pub temperature: f64,
    pub calibrated: MetricSet,
    pub uncalibrated: MetricSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    /// Folds contributing (undefined values are skipped).
    pub n: usize,
}

impl Aggregate {
    fn of(values: &[f64]) -> Option<Aggregate> {
        (!values.is_empty()).then(|| Aggregate {
            mean: mean(values),
            std: sample_std(values),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub categories: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub calibrated: BTreeMap<String, Aggregate>,
    pub uncalibrated: BTreeMap<String, Aggregate>,
    /// Calibrated minus uncalibrated standard accuracy across folds.
    pub calibration_ttest: Option<PairedTTest>,
    pub warnings: Vec<String>,
}

/// Which ids went where in one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub fit_ids: Vec<String>,
    pub calibration_ids: Vec<String>,
    /// `source_id` of every synthetic example in the fitting set.
    pub synthetic_source_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: CvReport,
    pub traces: Vec<FoldTrace>,
    /// Calibrated test predictions, per fold.
    pub predictions: Vec<Vec<Prediction>>,
}

fn metric_set(
    preds: &[Prediction],
    n_classes: usize,
    target: &[f64],
    config: &CvConfig,
) -> Result<MetricSet, EvaluateError> {
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probs.clone()).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.true_label.expect("test rows are labeled")).collect();
    let table = reliability(&probs, &labels, config.n_bins)?;
    let gate = conf_gated_accuracy(preds, config.high_conf_threshold)?;
    let predicted_distribution = label_distribution(preds, n_classes, LabelSource::Predicted)?;
    let tv_distance = distribution_gap(target, &predicted_distribution)?.tv_distance;
    Ok(MetricSet {
        standard_acc: standard_accuracy(preds)?,
        high_conf_acc: gate.accuracy,
        high_conf_coverage: gate.coverage,
        n_high_conf: gate.n_selected,
        top_fraction_acc: config
            .top_fractions
            .iter()
            .map(|&q| Ok(TopFraction { q, accuracy: top_fraction_accuracy(preds, q)? }))
            .collect::<Result<_, EvaluateError>>()?,
        top_k: config.top_k,
        top_k_acc: top_k_accuracy(preds, config.top_k)?,
        ece: table.ece,
        nll: table.nll,
        predicted_distribution,
        tv_distance,
        per_class_recall: per_class_recall(preds, n_classes)?,
    })
}

fn aggregate(sets: &[&MetricSet], n_classes: usize) -> BTreeMap<String, Aggregate> {
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |key: String, v: Option<f64>| {
        let entry = series.entry(key).or_default();
        if let Some(v) = v {
            entry.push(v);
        }
    };
    for m in sets {
        push("standard_acc".into(), Some(m.standard_acc));
        push("high_conf_acc".into(), m.high_conf_acc);
        push("high_conf_coverage".into(), Some(m.high_conf_coverage));
        for tf in &m.top_fraction_acc {
            push(format!("top_fraction_acc@{}", tf.q), Some(tf.accuracy));
        }
        push(format!("top{}_acc", m.top_k), Some(m.top_k_acc));
        push("ece".into(), Some(m.ece));
        push("nll".into(), Some(m.nll));
        push("tv_distance".into(), Some(m.tv_distance));
        let all: Vec<usize> = (0..n_classes).collect();
        push("macro_recall".into(), macro_recall(&m.per_class_recall, &all));
    }
    series
        .into_iter()
        .filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k, a)))
        .collect()
}

struct Pool {
    examples: Vec<CleanedExample>,
    labels: Vec<usize>,
}

fn prepare(
    transactions: &[Transaction],
    categories: &CategorySet,
    clean_config: &CleanConfig,
    holdout_company: Option<&str>,
) -> Result<(Pool, Pool), EvaluateError> {
    let mut pool = Pool { examples: Vec::new(), labels: Vec::new() };
    let mut extra = Pool { examples: Vec::new(), labels: Vec::new() };
    for t in transactions {
        let Some(name) = t.label.as_deref() else { continue };
        let label = categories
            .id(name)
            .ok_or_else(|| EvaluateError::UnknownLabel(name.to_string()))?;
        let cleaned = clean(&t.raw_description, clean_config);
        if cleaned == clean_config.placeholder {
            continue;
        }
        let target = match holdout_company {
            Some(c) if t.company.as_deref() != Some(c) => &mut extra,
            _ => &mut pool,
        };
        target.examples.push(CleanedExample {
            transaction_id: t.id.clone(),
            cleaned,
            label: Some(label),
        });
        target.labels.push(label);
    }
    Ok((pool, extra))
}

/// Stratified k-fold evaluation of the full pipeline. Each fold uses seed
/// `config.seed + fold`, carves its calibration split out of the training
/// portion, augments only the part used for fitting, and scores only real
/// held-out rows.
pub fn run_cv(
    transactions: &[Transaction],
    categories: &CategorySet,
    clean_config: &CleanConfig,
    config: &CvConfig,
    generator: Option<&dyn VariantGenerator>,
) -> Result<CvOutcome, EvaluateError> {
    if config.augment && generator.is_none() {
        return Err(EvaluateError::InvalidConfig(
            "augmentation is enabled but no generator was supplied".into(),
        ));
    }
    let n_classes = categories.len();
    let (pool, extra) = prepare(
        transactions,
        categories,
        clean_config,
        config.holdout_company.as_deref(),
    )?;
    if pool.examples.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    let mut warnings = Vec::new();
    let mut class_counts = vec![0usize; n_classes];
    for &y in &pool.labels {
        class_counts[y] += 1;
    }
    for (c, &n) in class_counts.iter().enumerate() {
        if n > 0 && n < config.k {
            warnings.push(format!(
                "category {:?} has {n} examples, fewer than k = {}",
                categories.name(c).unwrap_or("?"),
                config.k
            ));
        }
    }

    let folds = stratified_kfold(&pool.labels, config.k, config.seed)?;
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    let mut all_predictions = Vec::new();

    // Indices >= pool.len() refer to `extra`.
    let all_examples: Vec<&CleanedExample> = pool.examples.iter().chain(&extra.examples).collect();
    let all_labels: Vec<usize> = pool.labels.iter().chain(&extra.labels).copied().collect();

    for (fold, test_idx) in folds.iter().enumerate() {
        let fold_seed = config.seed.wrapping_add(fold as u64);
        let test_set: BTreeSet<usize> = test_idx.iter().copied().collect();
        let train_idx: Vec<usize> = (0..all_examples.len()).filter(|i| !test_set.contains(i)).collect();
        let split = split_train_calibration(
            &train_idx,
            config.calibration_fraction,
            &all_labels,
            fold_seed,
        )?;
        warnings.extend(split.warnings.iter().map(|w| format!("fold {fold}: {w}")));

        let fit_examples: Vec<CleanedExample> =
            split.train.iter().map(|&i| all_examples[i].clone()).collect();
        let synthetic = if config.augment {
            let generator = generator.expect("checked above");
            augment_examples(
                &fit_examples,
                categories,
                &config.augment_config,
                generator,
                clean_config,
            )?
            .synthetic
        } else {
            Vec::new()
        };

        let mut texts: Vec<&str> = fit_examples.iter().map(|e| e.cleaned.as_str()).collect();
        texts.extend(synthetic.iter().map(|s| s.cleaned.as_str()));
        let mut labels: Vec<usize> = split.train.iter().map(|&i| all_labels[i]).collect();
        labels.extend(synthetic.iter().map(|s| s.label));

        let tfidf = fit_tfidf(&texts, config.tfidf.clone())?;
        let features: Vec<SparseVector> = texts.iter().map(|t| tfidf.transform(t)).collect();
        let train_config = TrainConfig {
            seed: fold_seed,
            ..config.train.clone()
        };
        let model = train(&features, &labels, n_classes, &train_config)?;

        let logits_of = |idx: &[usize]| -> Result<Vec<Vec<f64>>, EvaluateError> {
            idx.iter()
                .map(|&i| Ok(model.predict_logits(&tfidf.transform(&all_examples[i].cleaned))?))
                .collect()
        };
        let cal_logits = logits_of(&split.calibration)?;
        let cal_labels: Vec<usize> = split.calibration.iter().map(|&i| all_labels[i]).collect();
        let calibration_config = CalibrationConfig {
            seed: fold_seed,
            ..config.calibration.clone()
        };
        let params: CalibrationParams = fit_calibration(&cal_logits, &cal_labels, &calibration_config)?;

        let test_logits = logits_of(test_idx)?;
        let mut calibrated = Vec::with_capacity(test_idx.len());
        let mut uncalibrated = Vec::with_capacity(test_idx.len());
        for (&i, z) in test_idx.iter().zip(&test_logits) {
            let ex = all_examples[i];
            calibrated.push(Prediction::new(&ex.transaction_id, calibrated_proba(&params, z), ex.label));
            uncalibrated.push(Prediction::new(&ex.transaction_id, softmax(z), ex.label));
        }
        let target = label_distribution(&calibrated, n_classes, LabelSource::True)?;
        reports.push(FoldReport {
            fold,
            seed: fold_seed,
            n: test_idx.len(),
            n_train_real: split.train.len(),
            n_calibration: split.calibration.len(),
            n_synthetic: synthetic.len(),
            temperature: params.temperature,
            calibrated: metric_set(&calibrated, n_classes, &target, config)?,
            uncalibrated: metric_set(&uncalibrated, n_classes, &target, config)?,
            target_distribution: target,
        });
        let ids = |idx: &[usize]| -> Vec<String> {
            idx.iter().map(|&i| all_examples[i].transaction_id.clone()).collect()
        };
        traces.push(FoldTrace {
            fold,
            test_ids: ids(test_idx),
            fit_ids: ids(&split.train),
            calibration_ids: ids(&split.calibration),
            synthetic_source_ids: synthetic.iter().map(|s| s.source_id.clone()).collect(),
        });
        all_predictions.push(calibrated);
    }

    let cal_sets: Vec<&MetricSet> = reports.iter().map(|r| &r.calibrated).collect();
    let uncal_sets: Vec<&MetricSet> = reports.iter().map(|r| &r.uncalibrated).collect();
    let cal_acc: Vec<f64> = cal_sets.iter().map(|m| m.standard_acc).collect();
    let uncal_acc: Vec<f64> = uncal_sets.iter().map(|m| m.standard_acc).collect();
    let calibration_ttest = match paired_ttest(&cal_acc, &uncal_acc) {
        Ok(t) => Some(t),
        Err(e) => {
            warnings.push(format!("calibration t-test skipped: {e}"));
            None
        }
    };
    Ok(CvOutcome {
        report: CvReport {
            categories: categories.names().to_vec(),
            k: config.k,
            seed: config.seed,
            calibrated: aggregate(&cal_sets, n_classes),
            uncalibrated: aggregate(&uncal_sets, n_classes),
            folds: reports,
            calibration_ttest,
            warnings,
        },
        traces,
        predictions: all_predictions,
    })
}

impl CvReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width summary: one row per aggregated metric.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>18} {:>18}", "metric", "calibrated", "uncalibrated");
        let keys: BTreeSet<&String> = self.calibrated.keys().chain(self.uncalibrated.keys()).collect();
        let cell = |a: Option<&Aggregate>| match a {
            Some(a) => format!("{:.4} ± {:.4}", a.mean, a.std),
            None => "undefined".to_string(),
        };
        for key in keys {
            let _ = writeln!(
                out,
                "{:<24} {:>18} {:>18}",
                key,
                cell(self.calibrated.get(key)),
                cell(self.uncalibrated.get(key))
            );
        }
        if let Some(t) = &self.calibration_ttest {
            let _ = writeln!(
                out,
                "paired t-test (calibrated - uncalibrated accuracy): t = {:.3}, df = {}, p = {:.4}",
                t.t, t.df, t.p_two_tailed
            );
        }
        out
    }
}

/// `id,true,pred,confidence,top2` with category names; `top2` joins the two
/// most probable categories with `|`.
pub fn write_prediction_dump<W: Write>(
    writer: W,
    predictions: &[Prediction],
    categories: &CategorySet,
) -> Result<(), EvaluateError> {
    let mut out = csv::Writer::from_writer(writer);
    let name = |c: usize| categories.name(c).unwrap_or("?").to_string();
    out.write_record(["id", "true", "pred", "confidence", "top2"])?;
    for p in predictions {
        let top2: Vec<String> = p.top_k(2).into_iter().map(name).collect();
        out.write_record([
            p.transaction_id.clone(),
            p.true_label.map(name).unwrap_or_default(),
            name(p.predicted),
            format!("{:.6}", p.confidence),
            top2.join("|"),
        ])?;
    }
    out.flush().map_err(|e| EvaluateError::Csv(e.into()))?;
    Ok(())
}
