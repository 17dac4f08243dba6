//! The staged pipeline. Every stage reads the previous stage's artifact
//! from the work directory and writes its own, so any stage can be re-run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use txncat_core::augment::{
    augment_examples, quality_report, AugmentConfig, BalanceConfig, HashedTrigramEmbedder,
    Lexicon, OfflineGenerator, Origin, RemoteGenerator, SyntheticExample, VariantGenerator,
};
use txncat_core::calibrate::{calibrated_proba, fit_calibration, reliability};
use txncat_core::evaluate::{run_cv, write_prediction_dump, CvConfig, CvOutcome};
use txncat_core::ingest::{load_dataset, split_train_calibration, CategorySet, Transaction};
use txncat_core::model::{fit_tfidf, softmax, train, ClassifierBundle, SparseVector};
use txncat_core::preprocess::{clean, group, CleanedExample};
use txncat_core::util::{argmax, top_k_indices};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const CLEANED_FILE: &str = "cleaned.jsonl";
pub const GROUPED_FILE: &str = "grouped.jsonl";
pub const GROUPS_FILE: &str = "groups.json";
pub const CATEGORIES_FILE: &str = "categories.json";
pub const SYNTHETIC_FILE: &str = "synthetic.jsonl";
pub const PLAN_FILE: &str = "balance_plan.json";
pub const SPLIT_FILE: &str = "split.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const CV_PREDICTIONS: &str = "cv_predictions.csv";
pub const RELIABILITY_CSV: &str = "reliability.csv";
pub const QUALITY_FILE: &str = "augment_quality.txt";

/// One cleaned transaction description, labels by category name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedRow {
    pub id: String,
    pub cleaned: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub discard: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub member_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub discard: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub cleaned: String,
    pub label: String,
    pub source_id: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub calibration_fraction: f64,
    pub fit_ids: Vec<String>,
    pub calibration_ids: Vec<String>,
}

/// Status of one scored row in the prediction dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Scored,
    /// The description cleaned to the placeholder; no prediction is made.
    Discarded,
}

/// A row of `predictions.csv`: the evaluation dump columns followed by the
/// row status and the full probability vector in category order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    #[serde(rename = "true")]
    pub true_label: String,
    pub pred: String,
    pub confidence: String,
    pub top2: String,
    pub status: RowStatus,
    pub probs: String,
}

impl PredictionRow {
    pub fn probabilities(&self) -> Result<Vec<f64>, CliError> {
        if self.probs.is_empty() {
            return Ok(Vec::new());
        }
        self.probs
            .split('|')
            .map(|p| {
                p.parse()
                    .map_err(|_| CliError::BadInput(format!("row {:?}: bad probability {p:?}", self.id)))
            })
            .collect()
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    create_parent(path)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).map_err(|e| CliError::Internal(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| {
        CliError::BadInput(format!("{}: {e} (run `txncat {stage}` first)", path.display()))
    })?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| {
            CliError::BadInput(format!("{} line {}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::BadInput(format!("{}: {e} (run `txncat {stage}` first)", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))
}

pub fn load_transactions(path: &Path) -> Result<Vec<Transaction>, CliError> {
    if !path.exists() {
        return Err(CliError::BadInput(format!("dataset not found: {}", path.display())));
    }
    Ok(load_dataset(path)?)
}

/// Stage 1: clean every description of the dataset.
pub fn cmd_clean(config: &PipelineConfig) -> Result<String, CliError> {
    let transactions = load_transactions(&config.dataset()?)?;
    let clean_config = config.clean_config()?;
    let categories = CategorySet::from_transactions(&transactions)?;
    let rows: Vec<CleanedRow> = transactions
        .iter()
        .map(|t| {
            let cleaned = clean(&t.raw_description, &clean_config);
            CleanedRow {
                id: t.id.clone(),
                discard: cleaned == clean_config.placeholder,
                cleaned,
                label: t.label.clone(),
            }
        })
        .collect();
    write_jsonl(&config.work_file(CLEANED_FILE), &rows)?;
    write_json(&config.work_file(CATEGORIES_FILE), &categories)?;
    let discarded = rows.iter().filter(|r| r.discard).count();
    Ok(format!(
        "cleaned {} rows ({discarded} discarded, {} categories)",
        rows.len(),
        categories.len()
    ))
}

pub fn load_categories(config: &PipelineConfig) -> Result<CategorySet, CliError> {
    read_json(&config.work_file(CATEGORIES_FILE), "clean")
}

fn to_examples(rows: &[CleanedRow], categories: &CategorySet) -> Result<Vec<CleanedExample>, CliError> {
    rows.iter()
        .map(|r| {
            let label = match &r.label {
                None => None,
                Some(name) => Some(categories.id(name).ok_or_else(|| {
                    CliError::BadInput(format!("row {:?}: unknown category {name:?}", r.id))
                })?),
            };
            Ok(CleanedExample {
                transaction_id: r.id.clone(),
                cleaned: r.cleaned.clone(),
                label,
            })
        })
        .collect()
}

/// Stage 2: group equivalent descriptions. Unlabeled members of a group
/// whose labeled members all agree inherit that label.
pub fn cmd_group(config: &PipelineConfig) -> Result<String, CliError> {
    let mut rows: Vec<CleanedRow> = read_jsonl(&config.work_file(CLEANED_FILE), "clean")?;
    let categories = load_categories(config)?;
    let examples = to_examples(&rows, &categories)?;
    let groups = group(&examples, config.group.mode, &config.clean.placeholder);

    let by_id: BTreeMap<String, usize> = rows.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    let mut propagated = 0;
    let mut group_rows = Vec::with_capacity(groups.len());
    for g in &groups {
        let labels: BTreeSet<&str> = g
            .member_ids
            .iter()
            .filter_map(|id| rows[by_id[id]].label.as_deref())
            .collect();
        let common = (labels.len() == 1 && !g.discard).then(|| labels.iter().next().unwrap().to_string());
        group_rows.push(GroupRow {
            key: g.key.clone(),
            member_ids: g.member_ids.clone(),
            label: common.clone(),
            discard: g.discard,
        });
        if let Some(label) = common {
            for id in &g.member_ids {
                let row = &mut rows[by_id[id]];
                if row.label.is_none() {
                    row.label = Some(label.clone());
                    propagated += 1;
                }
            }
        }
    }
    write_jsonl(&config.work_file(GROUPED_FILE), &rows)?;
    write_json(&config.work_file(GROUPS_FILE), &group_rows)?;
    Ok(format!(
        "{} rows in {} groups; {propagated} labels propagated",
        rows.len(),
        groups.len()
    ))
}

/// Labeled, non-discarded rows of the grouping stage, with their fit and
/// calibration partition. Deterministic in the seed, so every stage that
/// needs the partition recomputes the same one.
pub struct TrainingData {
    pub categories: CategorySet,
    pub examples: Vec<CleanedExample>,
    pub fit: Vec<usize>,
    pub calibration: Vec<usize>,
}

pub fn training_data(config: &PipelineConfig) -> Result<TrainingData, CliError> {
    let rows: Vec<CleanedRow> = read_jsonl(&config.work_file(GROUPED_FILE), "group")?;
    let categories = load_categories(config)?;
    let labeled: Vec<CleanedRow> = rows.into_iter().filter(|r| r.label.is_some() && !r.discard).collect();
    let examples = to_examples(&labeled, &categories)?;
    if examples.is_empty() {
        return Err(CliError::BadInput("no labeled, non-placeholder rows to train on".into()));
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.label.expect("labeled")).collect();
    let all: Vec<usize> = (0..examples.len()).collect();
    let split = split_train_calibration(&all, config.calibrate.calibration_fraction, &labels, config.seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let record = SplitRecord {
        seed: config.seed,
        calibration_fraction: config.calibrate.calibration_fraction,
        fit_ids: split.train.iter().map(|&i| examples[i].transaction_id.clone()).collect(),
        calibration_ids: split.calibration.iter().map(|&i| examples[i].transaction_id.clone()).collect(),
    };
    write_json(&config.work_file(SPLIT_FILE), &record)?;
    Ok(TrainingData {
        categories,
        examples,
        fit: split.train,
        calibration: split.calibration,
    })
}

pub fn augment_config(config: &PipelineConfig) -> Result<AugmentConfig, CliError> {
    Ok(AugmentConfig {
        balance: BalanceConfig {
            ref_count: config.augment.ref_count,
            ratio_cap: config.augment.ratio_cap,
            overrides: config.overrides()?,
        },
        temperature: config.augment.temperature,
        max_tokens: config.augment.max_tokens,
    })
}

/// The offline generator when `offline` is set, else the remote client.
pub fn make_generator(config: &PipelineConfig, offline: bool) -> Result<Box<dyn VariantGenerator>, CliError> {
    if offline {
        let path = config
            .paths
            .lexicon
            .as_deref()
            .map(|p| config.resolve(p))
            .ok_or_else(|| CliError::Config("offline generation needs a lexicon: set paths.lexicon or pass --lexicon".into()))?;
        if !path.is_file() {
            return Err(CliError::Config(format!("lexicon file not found: {}", path.display())));
        }
        let lexicon = Lexicon::load(&path)?;
        Ok(Box::new(OfflineGenerator::new(lexicon, config.seed)))
    } else {
        Ok(Box::new(RemoteGenerator::from_env(config.generator.clone())?))
    }
}

/// Stage 3: synthesize examples for the fitting portion only.
pub fn cmd_augment(config: &PipelineConfig, offline: bool) -> Result<String, CliError> {
    let data = training_data(config)?;
    let generator = make_generator(config, offline)?;
    let clean_config = config.clean_config()?;
    let fit: Vec<CleanedExample> = data.fit.iter().map(|&i| data.examples[i].clone()).collect();
    let out = augment_examples(&fit, &data.categories, &augment_config(config)?, generator.as_ref(), &clean_config)?;
    let rows: Vec<SyntheticRow> = out
        .synthetic
        .iter()
        .map(|s| SyntheticRow {
            cleaned: s.cleaned.clone(),
            label: data.categories.name(s.label).unwrap_or("?").to_string(),
            source_id: s.source_id.clone(),
            origin: s.origin,
        })
        .collect();
    write_jsonl(&config.work_file(SYNTHETIC_FILE), &rows)?;
    write_json(&config.work_file(PLAN_FILE), &out.plan)?;

    let report = quality_report(&fit, &out.synthetic, &data.categories, &HashedTrigramEmbedder::default(), config.seed)?;
    let reports = config.resolve(&config.paths.reports);
    write_atomic(&reports.join(QUALITY_FILE), report.to_key_value().as_bytes())?;
    Ok(format!(
        "generated {} synthetic examples (planned {})",
        rows.len(),
        out.plan.total_to_generate()
    ))
}

fn load_synthetic(config: &PipelineConfig, categories: &CategorySet) -> Result<Vec<SyntheticExample>, CliError> {
    let rows: Vec<SyntheticRow> = read_jsonl(&config.work_file(SYNTHETIC_FILE), "augment")?;
    rows.into_iter()
        .map(|r| {
            let label = categories
                .id(&r.label)
                .ok_or_else(|| CliError::BadInput(format!("synthetic row has unknown category {:?}", r.label)))?;
            Ok(SyntheticExample {
                cleaned: r.cleaned,
                label,
                source_id: r.source_id,
                origin: r.origin,
            })
        })
        .collect()
}

/// Stage 4: fit TF-IDF and the softmax model on the fitting portion, plus
/// the synthetic rows when augmentation is enabled, and write an
/// uncalibrated bundle.
pub fn cmd_train(config: &PipelineConfig) -> Result<String, CliError> {
    let data = training_data(config)?;
    let clean_config = config.clean_config()?;
    let synthetic = if config.augment.enabled {
        load_synthetic(config, &data.categories)?
    } else {
        Vec::new()
    };
    let fit_ids: BTreeSet<&str> = data.fit.iter().map(|&i| data.examples[i].transaction_id.as_str()).collect();
    if let Some(s) = synthetic.iter().find(|s| !fit_ids.contains(s.source_id.as_str())) {
        return Err(CliError::BadInput(format!(
            "synthetic example derived from {:?}, which is not in the fitting portion; re-run `txncat augment`",
            s.source_id
        )));
    }
    let mut texts: Vec<&str> = data.fit.iter().map(|&i| data.examples[i].cleaned.as_str()).collect();
    texts.extend(synthetic.iter().map(|s| s.cleaned.as_str()));
    let mut labels: Vec<usize> = data.fit.iter().map(|&i| data.examples[i].label.expect("labeled")).collect();
    labels.extend(synthetic.iter().map(|s| s.label));

    let tfidf = fit_tfidf(&texts, config.model.tfidf.clone())?;
    let features: Vec<SparseVector> = texts.iter().map(|t| tfidf.transform(t)).collect();
    let model = train(&features, &labels, data.categories.len(), &config.train_config())?;
    let loss = model.training_meta().final_train_loss;
    let bundle = ClassifierBundle::new(data.categories, clean_config, tfidf, model)?;
    let path = config.resolve(&config.paths.bundle);
    create_parent(&path)?;
    bundle.save(&path)?;
    Ok(format!(
        "trained on {} real and {} synthetic rows; final loss {loss:.6}; bundle {}",
        data.fit.len(),
        synthetic.len(),
        path.display()
    ))
}

pub fn load_bundle(path: &Path) -> Result<ClassifierBundle, CliError> {
    if !path.exists() {
        return Err(CliError::BadInput(format!("model bundle not found: {}", path.display())));
    }
    Ok(ClassifierBundle::load(path)?)
}

/// Stage 5: fit temperature and bias on the calibration portion and store
/// them in the bundle.
pub fn cmd_calibrate(config: &PipelineConfig) -> Result<String, CliError> {
    let data = training_data(config)?;
    let path = config.resolve(&config.paths.bundle);
    let bundle = load_bundle(&path)?;
    if bundle.categories != data.categories {
        return Err(CliError::BadInput("bundle categories differ from the grouped data; re-run `txncat train`".into()));
    }
    let logits: Vec<Vec<f64>> = data
        .calibration
        .iter()
        .map(|&i| bundle.logits_cleaned(&data.examples[i].cleaned))
        .collect::<Result<_, _>>()?;
    let labels: Vec<usize> = data.calibration.iter().map(|&i| data.examples[i].label.expect("labeled")).collect();
    let params = fit_calibration(&logits, &labels, &config.calibration_config())?;
    let probs: Vec<Vec<f64>> = logits.iter().map(|z| calibrated_proba(&params, z)).collect();
    let before: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
    let n_bins = config.calibrate.n_bins;
    let table_before = reliability(&before, &labels, n_bins)?;
    let table = reliability(&probs, &labels, n_bins)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&config.resolve(&config.paths.reports).join(RELIABILITY_CSV), &csv)?;
    let summary = format!(
        "T = {:.4}; calibration-split ECE {:.4} -> {:.4}, NLL {:.4} -> {:.4}",
        params.temperature, table_before.ece, table.ece, table_before.nll, table.nll
    );
    bundle.with_calibration(params)?.save(&path)?;
    Ok(summary)
}

/// Builds the cross-validation config from the pipeline config.
pub fn cv_config(config: &PipelineConfig) -> Result<CvConfig, CliError> {
    Ok(CvConfig {
        k: config.evaluate.k,
        seed: config.seed,
        calibration_fraction: config.calibrate.calibration_fraction,
        tfidf: config.model.tfidf.clone(),
        train: config.train_config(),
        calibration: config.calibration_config(),
        n_bins: config.calibrate.n_bins,
        high_conf_threshold: config.evaluate.high_conf_threshold,
        top_fractions: config.evaluate.top_fractions.clone(),
        top_k: config.evaluate.top_k,
        augment: config.augment.enabled,
        augment_config: augment_config(config)?,
        holdout_company: config.evaluate.holdout_company.clone(),
    })
}

/// Runs k-fold evaluation on the dataset and writes the JSON report, the
/// table, the pooled prediction dump and the pooled reliability bins.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<(CvOutcome, PathBuf), CliError> {
    let transactions = load_transactions(&config.dataset()?)?;
    let categories = CategorySet::from_transactions(&transactions)?;
    let clean_config = config.clean_config()?;
    let cv = cv_config(config)?;
    let generator = if cv.augment {
        Some(make_generator(config, config.augment.offline)?)
    } else {
        None
    };
    let outcome = run_cv(&transactions, &categories, &clean_config, &cv, generator.as_deref())?;
    let reports = config.resolve(&config.paths.reports);
    let mut json = outcome.report.to_json();
    json.push('\n');
    write_atomic(&reports.join(REPORT_JSON), json.as_bytes())?;
    write_atomic(&reports.join(REPORT_TABLE), outcome.report.to_table().as_bytes())?;

    let pooled: Vec<_> = outcome.predictions.iter().flatten().cloned().collect();
    let mut dump = Vec::new();
    write_prediction_dump(&mut dump, &pooled, &categories)?;
    write_atomic(&reports.join(CV_PREDICTIONS), &dump)?;
    let probs: Vec<Vec<f64>> = pooled.iter().map(|p| p.probs.clone()).collect();
    let labels: Vec<usize> = pooled.iter().map(|p| p.true_label.expect("cv rows are labeled")).collect();
    let mut csv = Vec::new();
    reliability(&probs, &labels, config.calibrate.n_bins)?
        .write_csv(&mut csv)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&reports.join(RELIABILITY_CSV), &csv)?;
    Ok((outcome, reports))
}

/// Shortest round-trip decimal form, so the review service sees the exact
/// probabilities.
fn format_probs(probs: &[f64]) -> String {
    probs.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("|")
}

/// Scores every transaction with the bundle. Rows whose description
/// cleans to the placeholder are flagged `discarded`.
pub fn predict_rows(bundle: &ClassifierBundle, transactions: &[Transaction]) -> Result<Vec<PredictionRow>, CliError> {
    let names = &bundle.categories;
    transactions
        .iter()
        .map(|t| {
            let cleaned = clean(&t.raw_description, &bundle.clean);
            let true_label = t.label.clone().unwrap_or_default();
            if cleaned == bundle.clean.placeholder {
                return Ok(PredictionRow {
                    id: t.id.clone(),
                    true_label,
                    pred: String::new(),
                    confidence: String::new(),
                    top2: String::new(),
                    status: RowStatus::Discarded,
                    probs: String::new(),
                });
            }
            let probs = bundle.proba_cleaned(&cleaned)?;
            let best = argmax(&probs);
            let top2: Vec<&str> = top_k_indices(&probs, 2)
                .into_iter()
                .map(|c| names.name(c).unwrap_or("?"))
                .collect();
            Ok(PredictionRow {
                id: t.id.clone(),
                true_label,
                pred: names.name(best).unwrap_or("?").to_string(),
                confidence: probs[best].to_string(),
                top2: top2.join("|"),
                status: RowStatus::Scored,
                probs: format_probs(&probs),
            })
        })
        .collect()
}

pub fn write_prediction_rows(path: &Path, rows: &[PredictionRow]) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(Vec::new());
    for r in rows {
        out.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    if rows.is_empty() {
        out.write_record(["id", "true", "pred", "confidence", "top2", "status", "probs"])
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_prediction_rows(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::BadInput(format!("{}: {e} (run `txncat predict` first)", path.display())))?;
    csv::Reader::from_reader(BufReader::new(file))
        .deserialize()
        .map(|r| r.map_err(|e| CliError::BadInput(format!("{}: {e}", path.display()))))
        .collect()
}

/// Scores `input` (the configured dataset by default) and writes the
/// prediction dump.
pub fn cmd_predict(bundle_path: &Path, input: &Path, output: &Path) -> Result<String, CliError> {
    let bundle = load_bundle(bundle_path)?;
    let transactions = load_transactions(input)?;
    let rows = predict_rows(&bundle, &transactions)?;
    write_prediction_rows(output, &rows)?;
    let discarded = rows.iter().filter(|r| r.status == RowStatus::Discarded).count();
    Ok(format!(
        "scored {} rows ({discarded} discarded) -> {}",
        rows.len() - discarded,
        output.display()
    ))
}
