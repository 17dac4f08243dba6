use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use txncat::config::PipelineConfig;
use txncat::error::CliError;
use txncat::pipeline;
use txncat::review::ReviewItem;
use txncat::server::{load_state, retrain_pipeline, router, RetrainFn, SharedState};
use txncat_core::ingest::{read_csv, Transaction};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn prepared(dir: &Path) -> PipelineConfig {
    let text = format!("[paths]\ndataset = {:?}\n", fixture("toy.csv").display().to_string());
    let config = PipelineConfig::parse(&text, dir).unwrap();
    pipeline::cmd_clean(&config).unwrap();
    pipeline::cmd_group(&config).unwrap();
    pipeline::cmd_train(&config).unwrap();
    pipeline::cmd_calibrate(&config).unwrap();
    let bundle = config.resolve(&config.paths.bundle);
    pipeline::cmd_predict(&bundle, &config.dataset().unwrap(), &config.work_file(pipeline::PREDICTIONS_FILE)).unwrap();
    config
}

fn state(config: &PipelineConfig) -> SharedState {
    load_state(config.clone(), Arc::new(retrain_pipeline)).unwrap()
}

async fn call(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_of(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(state, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn ids(page: &Value) -> Vec<String> {
    page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["transaction"]["id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn queue_is_lowest_confidence_first() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(&prepared(dir.path()));
    let (status, page) = json_of(&s, "GET", "/api/items?status=unreviewed&n=1000", None).await;
    assert_eq!(status, StatusCode::OK);
    let conf: Vec<f64> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["prediction"]["confidence"].as_f64().unwrap())
        .collect();
    assert_eq!(conf.len(), 121, "placeholder rows are not reviewable");
    assert!(conf.windows(2).all(|w| w[0] <= w[1]));
    let first = &page["items"][0];
    assert_eq!(first["top2"].as_array().unwrap().len(), 2);
    assert!(first["transaction"]["date"].is_string());
    assert!(first["cleaned"].is_string());

    let (_, desc) = json_of(&s, "GET", "/api/items?sort=confidence_desc&n=5&page=2", None).await;
    assert_eq!(desc["items"].as_array().unwrap().len(), 5);
    assert_eq!(desc["page"], 2);
    let (status, _) = json_of(&s, "GET", "/api/items?n=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = json_of(&s, "GET", "/api/items?status=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn confirm_and_correct_round_trip_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path());
    let s = state(&config);
    let (_, page) = json_of(&s, "GET", "/api/items?n=2", None).await;
    let order = ids(&page);
    let (a, b) = (order[0].clone(), order[1].clone());
    let b_pred = page["items"][1]["prediction"]["predicted"].as_str().unwrap().to_string();
    let (_, cats) = json_of(&s, "GET", "/api/categories", None).await;
    let other = cats["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .find(|c| *c != b_pred)
        .unwrap()
        .to_string();

    let (status, item) = json_of(&s, "POST", &format!("/api/items/{a}/label"), Some(json!({"action": "confirm"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "confirmed");
    let (status, item) = json_of(
        &s,
        "POST",
        &format!("/api/items/{b}/label"),
        Some(json!({"action": "correct", "label": other})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "corrected");
    assert_eq!(item["reviewer_label"], other.as_str());

    let (_, got) = json_of(&s, "GET", &format!("/api/items/{b}"), None).await;
    assert_eq!(got["status"], "corrected");

    let a_pred = page["items"][0]["prediction"]["predicted"].as_str().unwrap().to_string();
    let not_a = cats["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .find(|c| *c != a_pred)
        .unwrap()
        .to_string();
    let (status, body) = json_of(&s, "POST", &format!("/api/items/{a}/label"), Some(json!({"action": "correct", "label": not_a}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already confirmed"));
    let (status, again) = json_of(&s, "POST", &format!("/api/items/{a}/label"), Some(json!({"action": "confirm"}))).await;
    assert_eq!(status, StatusCode::OK, "repeating the same decision is idempotent");
    assert_eq!(again["status"], "confirmed");
    let (status, _) = json_of(&s, "POST", &format!("/api/items/{b}/label"), Some(json!({"action": "correct", "label": "no-such-category"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = json_of(&s, "POST", "/api/items/nope/label", Some(json!({"action": "confirm"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, unreviewed) = json_of(&s, "GET", "/api/items?status=unreviewed&n=1000", None).await;
    let remaining = ids(&unreviewed);
    assert_eq!(remaining.len(), 119);
    assert!(!remaining.contains(&a) && !remaining.contains(&b));
    assert_eq!(unreviewed["progress"]["reviewed"], 2);
    assert_eq!(unreviewed["progress"]["agreement_rate"], 0.5);
    let (_, confirmed) = json_of(&s, "GET", "/api/items?status=confirmed", None).await;
    assert_eq!(ids(&confirmed), vec![a.clone()]);

    let (status, csv) = call(&s, "GET", "/api/export/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    let exported: Vec<Transaction> = read_csv(csv.as_slice()).unwrap();
    let mut pairs: Vec<(String, String)> = exported.iter().map(|t| (t.id.clone(), t.label.clone().unwrap())).collect();
    pairs.sort();
    let mut expected = vec![(a.clone(), a_pred), (b.clone(), other.clone())];
    expected.sort();
    assert_eq!(pairs, expected);

    // A restart replays the journal to the same state.
    drop(s);
    let s = state(&config);
    let (_, again) = json_of(&s, "GET", "/api/items?status=reviewed", None).await;
    let mut reviewed = ids(&again);
    reviewed.sort();
    let mut want = vec![a, b];
    want.sort();
    assert_eq!(reviewed, want);
    let (_, csv2) = call(&s, "GET", "/api/export/labels", None).await;
    assert_eq!(csv, csv2);
}

#[tokio::test]
async fn uniform_sample_of_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(&prepared(dir.path()));
    let (_, a) = json_of(&s, "GET", "/api/items?sample=uniform&n=100&seed=3", None).await;
    let (_, b) = json_of(&s, "GET", "/api/items?sample=uniform&n=100&seed=3", None).await;
    let (_, c) = json_of(&s, "GET", "/api/items?sample=uniform&n=100&seed=4", None).await;
    let mut sample = ids(&a);
    assert_eq!(sample, ids(&b));
    assert_ne!(sample, ids(&c));
    sample.sort();
    sample.dedup();
    assert_eq!(sample.len(), 100);
}

#[tokio::test]
async fn metrics_need_an_evaluation_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path());
    let s = state(&config);
    let (status, body) = json_of(&s, "GET", "/api/metrics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("evaluate"));

    let mut eval = config.clone();
    eval.evaluate.k = 3;
    pipeline::cmd_evaluate(&eval).unwrap();
    let (status, body) = json_of(&s, "GET", "/api/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["k"], 3);
    assert!(body["calibrated"]["standard_acc"]["mean"].is_number());
    let gap = &body["distribution_gap"];
    let tv = gap["tv_distance"].as_f64().unwrap();
    let half_l1: f64 = gap["per_class_diff"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap().abs())
        .sum::<f64>()
        / 2.0;
    assert!((tv - half_l1).abs() < 1e-12);
}

#[tokio::test]
async fn retrain_is_single_slot() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path());
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let release_rx = Mutex::new(release_rx);
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen_in = seen.clone();
    let runner: Arc<RetrainFn> = Arc::new(move |_c: &PipelineConfig, labels: Vec<(Transaction, String)>| -> Result<Vec<ReviewItem>, CliError> {
        seen_in.lock().unwrap().push(labels.len());
        release_rx.lock().unwrap().recv().unwrap();
        Err(CliError::Internal("stub runner".into()))
    });
    let s = load_state(config, runner).unwrap();
    let (_, page) = json_of(&s, "GET", "/api/items?n=1", None).await;
    let id = ids(&page)[0].clone();
    json_of(&s, "POST", &format!("/api/items/{id}/label"), Some(json!({"action": "confirm"}))).await;

    let (status, body) = json_of(&s, "POST", "/api/retrain", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["state"], "running");
    let (status, _) = json_of(&s, "POST", "/api/retrain", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    release_tx.send(()).unwrap();
    let mut last = Value::Null;
    for _ in 0..200 {
        let (_, st) = json_of(&s, "GET", "/api/retrain/status", None).await;
        if st["state"] != "running" {
            last = st;
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(last["state"], "failed");
    assert!(last["message"].as_str().unwrap().contains("stub runner"));
    assert_eq!(*seen.lock().unwrap(), vec![1]);
}

#[tokio::test]
async fn default_retrain_applies_reviewed_labels_and_keeps_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path());
    let s = state(&config);
    let (_, page) = json_of(&s, "GET", "/api/items?n=1", None).await;
    let id = ids(&page)[0].clone();
    json_of(&s, "POST", &format!("/api/items/{id}/label"), Some(json!({"action": "confirm"}))).await;
    json_of(&s, "POST", "/api/retrain", None).await;
    let mut last = Value::Null;
    for _ in 0..1000 {
        let (_, st) = json_of(&s, "GET", "/api/retrain/status", None).await;
        if st["state"] != "running" {
            last = st;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(last["state"], "succeeded", "{last}");
    let (_, item) = json_of(&s, "GET", &format!("/api/items/{id}"), None).await;
    assert_eq!(item["status"], "confirmed");
    let merged = std::fs::read_to_string(config.work_file("retrain_dataset.csv")).unwrap();
    assert!(merged.lines().count() > 100);
}

#[test]
fn corrupt_journal_refuses_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepared(dir.path());
    let journal = config.resolve(&config.paths.journal);
    std::fs::write(&journal, "{\"id\":\"t001\",\"action\":\"confirm\"").unwrap();
    let Err(err) = load_state(config.clone(), Arc::new(retrain_pipeline)) else {
        panic!("a corrupt journal must not load");
    };
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("offset 0"), "{err}");

    let out = std::process::Command::new(env!("CARGO_BIN_EXE_txncat"))
        .current_dir(dir.path())
        .env("TXNCAT_PORT", "0")
        .args(["--data", fixture("toy.csv").to_str().unwrap(), "serve"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
}
