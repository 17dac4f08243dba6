//! Review HTTP API.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use txncat_core::evaluate::{distribution_gap, CvReport};
use txncat_core::ingest::{write_csv, Transaction};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::pipeline::{self, load_bundle, read_prediction_rows, PREDICTIONS_FILE, REPORT_JSON};
use crate::review::{build_items, Action, ItemQuery, ReviewError, ReviewItem, ReviewStore};

/// Runs one retraining pass on the reviewed labels and returns the new
/// review items.
pub type RetrainFn = dyn Fn(&PipelineConfig, Vec<(Transaction, String)>) -> Result<Vec<ReviewItem>, CliError>
    + Send
    + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainState {
    Idle,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrainStatus {
    pub state: RetrainState,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub message: Option<String>,
}

pub struct AppState {
    pub config: PipelineConfig,
    pub store: Mutex<ReviewStore>,
    pub retrain: Mutex<RetrainStatus>,
    pub runner: Arc<RetrainFn>,
}

pub type SharedState = Arc<AppState>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::AlreadyReviewed { .. } => StatusCode::CONFLICT,
            ReviewError::UnknownCategory(_) | ReviewError::InvalidDecision(_) | ReviewError::InvalidQuery(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Loads the bundle, dataset, prediction dump and journal named by the
/// config.
pub fn load_state(config: PipelineConfig, runner: Arc<RetrainFn>) -> Result<SharedState, CliError> {
    let bundle = load_bundle(&config.resolve(&config.paths.bundle))?;
    let transactions = pipeline::load_transactions(&config.dataset()?)?;
    let predictions = read_prediction_rows(&config.work_file(PREDICTIONS_FILE))?;
    let items = build_items(&transactions, &predictions, &bundle.categories, &bundle.clean)
        .map_err(|e| CliError::BadInput(e.to_string()))?;
    let store = ReviewStore::open(
        bundle.categories.clone(),
        items,
        &config.resolve(&config.paths.journal),
        config.serve.page_size,
        config.seed,
    )
    .map_err(|e| match e {
        ReviewError::CorruptJournal { .. } | ReviewError::JournalIo { .. } => CliError::BadInput(e.to_string()),
        e => CliError::Internal(e.to_string()),
    })?;
    Ok(Arc::new(AppState {
        config,
        store: Mutex::new(store),
        retrain: Mutex::new(RetrainStatus {
            state: RetrainState::Idle,
            started_at: None,
            finished_at: None,
            message: None,
        }),
        runner,
    }))
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/label", post(label_item))
        .route("/api/categories", get(categories))
        .route("/api/metrics", get(metrics))
        .route("/api/retrain", post(start_retrain))
        .route("/api/retrain/status", get(retrain_status))
        .route("/api/export/labels", get(export_labels))
        .with_state(state)
}

async fn list_items(State(s): State<SharedState>, Query(q): Query<ItemQuery>) -> Result<Response, ApiError> {
    let page = lock(&s.store).query(&q)?;
    Ok(Json(page).into_response())
}

async fn get_item(State(s): State<SharedState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let store = lock(&s.store);
    let item = store.get(&id).ok_or_else(|| ReviewError::UnknownItem(id.clone()))?;
    Ok(Json(item).into_response())
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    label: Option<String>,
    action: Action,
}

async fn label_item(
    State(s): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<LabelBody>,
) -> Result<Response, ApiError> {
    let mut store = lock(&s.store);
    let item = store.submit(&id, body.action, body.label.as_deref())?;
    Ok(Json(item).into_response())
}

async fn categories(State(s): State<SharedState>) -> Response {
    let names = lock(&s.store).categories().names().to_vec();
    Json(json!({ "categories": names })).into_response()
}

#[derive(Debug, Serialize)]
struct MetricsView {
    k: usize,
    seed: u64,
    categories: Vec<String>,
    calibrated: BTreeMap<String, txncat_core::evaluate::Aggregate>,
    uncalibrated: BTreeMap<String, txncat_core::evaluate::Aggregate>,
    calibration_ttest: Option<txncat_core::evaluate::PairedTTest>,
    /// Fold-averaged predicted vs true label distributions.
    distribution_gap: DistributionView,
}

#[derive(Debug, Serialize)]
struct DistributionView {
    target: BTreeMap<String, f64>,
    predicted: BTreeMap<String, f64>,
    per_class_diff: BTreeMap<String, f64>,
    tv_distance: f64,
}

fn fold_average(rows: Vec<&[f64]>) -> Vec<f64> {
    let n = rows.len() as f64;
    let k = rows.first().map(|r| r.len()).unwrap_or(0);
    (0..k).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect()
}

async fn metrics(State(s): State<SharedState>) -> Result<Response, ApiError> {
    let path: PathBuf = s.config.resolve(&s.config.paths.reports).join(REPORT_JSON);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(_) => {
            return Err(ApiError(
                StatusCode::NOT_FOUND,
                "no evaluation report yet; run `txncat evaluate`".into(),
            ))
        }
    };
    let report: CvReport = serde_json::from_str(&text)
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))?;
    if report.folds.is_empty() {
        return Err(ApiError(StatusCode::NOT_FOUND, "evaluation report has no folds".into()));
    }
    let target = fold_average(report.folds.iter().map(|f| f.target_distribution.as_slice()).collect());
    let predicted = fold_average(
        report
            .folds
            .iter()
            .map(|f| f.calibrated.predicted_distribution.as_slice())
            .collect(),
    );
    let gap = distribution_gap(&target, &predicted)
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let named = |v: &[f64]| -> BTreeMap<String, f64> { report.categories.iter().cloned().zip(v.iter().copied()).collect() };
    let view = MetricsView {
        k: report.k,
        seed: report.seed,
        distribution_gap: DistributionView {
            target: named(&target),
            predicted: named(&predicted),
            per_class_diff: named(&gap.per_class_diff),
            tv_distance: gap.tv_distance,
        },
        categories: report.categories,
        calibrated: report.calibrated,
        uncalibrated: report.uncalibrated,
        calibration_ttest: report.calibration_ttest,
    };
    Ok(Json(view).into_response())
}

async fn start_retrain(State(s): State<SharedState>) -> Result<Response, ApiError> {
    {
        let mut status = lock(&s.retrain);
        if status.state == RetrainState::Running {
            return Err(ApiError(StatusCode::CONFLICT, "a retrain is already running".into()));
        }
        *status = RetrainStatus {
            state: RetrainState::Running,
            started_at: Some(Utc::now()),
            finished_at: None,
            message: None,
        };
    }
    let labels = lock(&s.store).reviewed_labels();
    let state = s.clone();
    std::thread::spawn(move || {
        let result = (state.runner)(&state.config, labels);
        let message = match result {
            Ok(items) => {
                let n = items.len();
                lock(&state.store).replace_items(items);
                Ok(format!("retrained; {n} items rescored"))
            }
            Err(e) => Err(e.to_string()),
        };
        let mut status = lock(&state.retrain);
        status.finished_at = Some(Utc::now());
        match message {
            Ok(m) => {
                status.state = RetrainState::Succeeded;
                status.message = Some(m);
            }
            Err(m) => {
                log::error!("retrain failed: {m}");
                status.state = RetrainState::Failed;
                status.message = Some(m);
            }
        }
    });
    let status = lock(&s.retrain).clone();
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn retrain_status(State(s): State<SharedState>) -> Response {
    Json(lock(&s.retrain).clone()).into_response()
}

/// Reviewed rows as an ingest-format CSV, the reviewer label in `label`.
pub fn labels_csv(store: &ReviewStore) -> Result<Vec<u8>, CliError> {
    let rows: Vec<Transaction> = store
        .reviewed_labels()
        .into_iter()
        .map(|(mut t, label)| {
            t.label = Some(label);
            t
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    Ok(buf)
}

async fn export_labels(State(s): State<SharedState>) -> Result<Response, ApiError> {
    let body = labels_csv(&lock(&s.store)).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"labels.csv\""),
        ],
        body,
    )
        .into_response())
}

/// Default retraining: reviewed labels replace dataset labels, the staged
/// pipeline runs on the merged copy, and the original dataset is rescored.
pub fn retrain_pipeline(config: &PipelineConfig, reviewed: Vec<(Transaction, String)>) -> Result<Vec<ReviewItem>, CliError> {
    let dataset = config.dataset()?;
    let mut transactions = pipeline::load_transactions(&dataset)?;
    let labels: BTreeMap<String, String> = reviewed.into_iter().map(|(t, l)| (t.id, l)).collect();
    for t in &mut transactions {
        if let Some(l) = labels.get(&t.id) {
            t.label = Some(l.clone());
        }
    }
    let merged = config.work_file("retrain_dataset.csv");
    let mut buf = Vec::new();
    write_csv(&mut buf, &transactions)?;
    pipeline::write_atomic(&merged, &buf)?;

    let mut staged = config.clone();
    staged.paths.dataset = Some(std::path::absolute(&merged).map_err(|e| CliError::io(&merged, e))?);
    pipeline::cmd_clean(&staged)?;
    pipeline::cmd_group(&staged)?;
    if staged.augment.enabled {
        pipeline::cmd_augment(&staged, staged.augment.offline)?;
    }
    pipeline::cmd_train(&staged)?;
    pipeline::cmd_calibrate(&staged)?;
    let bundle = load_bundle(&config.resolve(&config.paths.bundle))?;
    let original = pipeline::load_transactions(&dataset)?;
    let rows = pipeline::predict_rows(&bundle, &original)?;
    pipeline::write_prediction_rows(&config.work_file(PREDICTIONS_FILE), &rows)?;
    build_items(&original, &rows, &bundle.categories, &bundle.clean).map_err(|e| CliError::Internal(e.to_string()))
}

/// Binds and serves until interrupted.
pub fn serve(config: PipelineConfig) -> Result<(), CliError> {
    let port = config.port()?;
    let host = config.serve.host.clone();
    let state = load_state(config, Arc::new(retrain_pipeline))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::Config(format!("cannot listen on {host}:{port}: {e}")))?;
        log::info!("review API listening on http://{}", listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}
