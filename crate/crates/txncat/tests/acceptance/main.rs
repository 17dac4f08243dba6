//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

#[path = "../common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use txncat_core::augment::{build_balance_plan, jaccard_from_coverage, BalanceConfig, BalanceOverrides, OfflineGenerator};
use txncat_core::calibrate::{calibrated_proba, ece, fit_calibration, nll, CalibrationConfig};
use txncat_core::evaluate::{macro_recall, per_class_recall, run_cv, student_t_two_tailed_p, CvConfig, CvOutcome, FoldTrace};
use txncat_core::ingest::write_csv;
use txncat_core::model::{cross_entropy_loss_and_grad, focal_loss_and_grad, LossKind};
use txncat_core::preprocess::CleanConfig;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn oracle_ln_softmax(z: &[f64], t: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    z[t] - m - z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `-alpha_t (1 - p_t)^gamma ln p_t`, with `1 - p_t` summed from the other
/// classes.
fn oracle_focal(z: &[f64], t: usize, alpha: &[f64], gamma: f64) -> f64 {
    let p = oracle_softmax(z);
    let rest: f64 = p.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, v)| v).sum();
    -alpha[t] * rest.powf(gamma) * oracle_ln_softmax(z, t)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let gammas = [0.0, 1.0, 2.0, 5.0];
    let h = 1e-5;
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let k = rng.gen_range(2..=8);
        let gamma = gammas[i % gammas.len()];
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(0.25..2.0)).collect();
        let t = rng.gen_range(0..k);
        let (_, grad) = focal_loss_and_grad(&z, t, &alpha, gamma).expect("valid instance");
        let fd: Vec<f64> = (0..k)
            .map(|j| {
                let mut up = z.clone();
                let mut down = z.clone();
                up[j] += h;
                down[j] -= h;
                (oracle_focal(&up, t, &alpha, gamma) - oracle_focal(&down, t, &alpha, gamma)) / (2.0 * h)
            })
            .collect();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&grad).max(norm(&fd));
        let rel = if scale == 0.0 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed();
    verdict(
        worst < 1e-5 && elapsed < Duration::from_secs(1),
        format!("200 instances, max relative error {worst:.3e} (< 1e-5), {elapsed:.2?} (< 1 s)"),
    )
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_loss: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=11);
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let t = rng.gen_range(0..k);
        let ones = vec![1.0; k];
        let (focal, focal_grad) = focal_loss_and_grad(&z, t, &ones, 0.0).expect("valid instance");
        let (ce, ce_grad) = cross_entropy_loss_and_grad(&z, t, &ones).expect("valid instance");
        let oracle = -oracle_ln_softmax(&z, t);
        worst_loss = worst_loss.max((focal - oracle).abs()).max((focal - ce).abs());
        let p = oracle_softmax(&z);
        for j in 0..k {
            let onehot = if j == t { 1.0 } else { 0.0 };
            worst_grad = worst_grad
                .max((focal_grad[j] - (p[j] - onehot)).abs())
                .max((focal_grad[j] - ce_grad[j]).abs());
        }
    }
    verdict(
        worst_loss <= 1e-12 && worst_grad <= 1e-12,
        format!("1000 instances, max |focal - ce| {worst_loss:.1e} on loss, {worst_grad:.1e} on gradient (<= 1e-12)"),
    )
}

fn criterion_3() -> Verdict {
    let (n, k) = (5000, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let label = WeightedIndex::new(oracle_softmax(&z)).unwrap().sample(&mut rng);
        labels.push(label);
        logits.push(z.iter().map(|v| 5.0 * v).collect::<Vec<f64>>());
    }
    let started = Instant::now();
    let params = fit_calibration(&logits, &labels, &CalibrationConfig::default()).expect("fit succeeds");
    let before: Vec<Vec<f64>> = logits.iter().map(|z| oracle_softmax(z)).collect();
    let after: Vec<Vec<f64>> = logits.iter().map(|z| calibrated_proba(&params, z)).collect();
    let (ece_pre, ece_post) = (ece(&before, &labels, 10).unwrap(), ece(&after, &labels, 10).unwrap());
    let (nll_pre, nll_post) = (nll(&before, &labels).unwrap(), nll(&after, &labels).unwrap());
    let elapsed = started.elapsed();
    let t = params.temperature;
    verdict(
        ece_post <= 0.5 * ece_pre
            && nll_post < nll_pre
            && (3.5..=6.5).contains(&t)
            && elapsed < Duration::from_secs(5),
        format!(
            "ECE {ece_pre:.4} -> {ece_post:.4} (<= half), NLL {nll_pre:.4} -> {nll_post:.4}, T = {t:.3} (in [3.5, 6.5]), {elapsed:.2?} (< 5 s)"
        ),
    )
}

fn small_classes(outcome: &CvOutcome, n: usize) -> Vec<usize> {
    let mut sizes: Vec<(usize, &str)> = common::CLASS_SIZES.iter().map(|&(c, s)| (s, c)).collect();
    sizes.sort();
    sizes[..n]
        .iter()
        .map(|(_, c)| outcome.report.categories.iter().position(|x| x == c).expect("category present"))
        .collect()
}

fn pooled_small_recall(outcome: &CvOutcome, classes: &[usize]) -> f64 {
    let pooled: Vec<_> = outcome.predictions.iter().flatten().cloned().collect();
    let recall = per_class_recall(&pooled, outcome.report.categories.len()).unwrap();
    macro_recall(&recall, classes).unwrap()
}

fn fold_mean_small_recall(outcome: &CvOutcome, classes: &[usize], calibrated: bool) -> f64 {
    let vals: Vec<f64> = outcome
        .report
        .folds
        .iter()
        .map(|f| {
            let m = if calibrated { &f.calibrated } else { &f.uncalibrated };
            macro_recall(&m.per_class_recall, classes).unwrap()
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn criterion_4(focal: &CvOutcome, ce: &CvOutcome, elapsed: Duration) -> Verdict {
    let small = small_classes(focal, 3);
    let focal_pooled = pooled_small_recall(focal, &small);
    let ce_pooled = pooled_small_recall(ce, &small);
    let focal_raw = fold_mean_small_recall(focal, &small, false);
    let ce_raw = fold_mean_small_recall(ce, &small, false);
    let a = focal_pooled > ce_pooled;

    let mut b = true;
    let mut c = true;
    let mut folds = Vec::new();
    for f in &focal.report.folds {
        let m = &f.calibrated;
        let hc = m.high_conf_acc;
        b &= hc.is_some_and(|h| h >= m.standard_acc);
        c &= m.top_k == 2 && m.top_k_acc >= m.standard_acc;
        folds.push(format!(
            "fold {}: acc {:.4} hc {} top2 {:.4}",
            f.fold,
            m.standard_acc,
            hc.map(|h| format!("{h:.4}")).unwrap_or_else(|| "none".into()),
            m.top_k_acc
        ));
    }
    let t = focal.report.calibration_ttest.map(|t| t.t);
    let d = t.is_some_and(|t| t > 0.0);
    let fast = elapsed < Duration::from_secs(120);
    println!("  small classes {:?}", small.iter().map(|&i| focal.report.categories[i].as_str()).collect::<Vec<_>>());
    println!("  (a) calibrated small-class macro recall: focal+aug {focal_pooled:.4} vs ce {ce_pooled:.4}");
    println!("      uncalibrated (fold mean): focal+aug {focal_raw:.4} vs ce {ce_raw:.4}");
    for line in &folds {
        println!("  {line}");
    }
    verdict(
        a && b && c && d && fast,
        format!(
            "(a) {} (b) {} (c) {} (d) t = {} {}; {elapsed:.2?} (< 2 min)",
            yes(a),
            yes(b),
            yes(c),
            t.map(|t| format!("{t:.3}")).unwrap_or_else(|| "undefined".into()),
            yes(d)
        ),
    )
}

fn yes(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn criterion_5() -> Verdict {
    let overrides = BalanceOverrides::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/balance_overrides.toml"))
        .expect("bundled override file loads");
    let counts: BTreeMap<String, usize> = common::CLASS_SIZES.iter().map(|&(c, n)| (c.to_string(), n)).collect();
    let plan = build_balance_plan(&counts, &BalanceConfig { overrides, ..BalanceConfig::default() }).unwrap();
    let expected = [565, 460, 1062, 960, 959, 1040, 988, 840, 936, 952, 810];
    let got: Vec<usize> = common::CLASS_SIZES
        .iter()
        .map(|(c, _)| plan.get(c).map(|e| e.synthetic_target).unwrap_or(0))
        .collect();
    verdict(got == expected, format!("targets {got:?}, total {}", plan.total_target()))
}

fn criterion_6() -> Verdict {
    let j = jaccard_from_coverage(0.480, 1416, 6576);
    let inter = 0.480 * 1416.0;
    let oracle = inter / (1416.0 + 6576.0 - inter);
    verdict(
        (0.092..=0.094).contains(&j) && (j - oracle).abs() < 1e-12,
        format!("jaccard {j:.5} (in [0.092, 0.094]); |V_r n V_s| / |V_r u V_s| = {oracle:.5}"),
    )
}

fn criterion_7() -> Verdict {
    let p1 = student_t_two_tailed_p(2.776, 4.0);
    let p2 = student_t_two_tailed_p(3.364, 4.0);
    verdict(
        (p1 - 0.050).abs() <= 0.002 && (0.022..=0.034).contains(&p2),
        format!("p(2.776, 4) = {p1:.4} (0.050 +/- 0.002), p(3.364, 4) = {p2:.4} (in [0.022, 0.034])"),
    )
}

fn criterion_8(corpus: &common::Corpus) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("desk.csv");
    let mut buf = Vec::new();
    write_csv(&mut buf, &corpus.transactions).unwrap();
    std::fs::write(&data, buf).unwrap();
    let lexicon = dir.path().join("lexicon.toml");
    std::fs::write(&lexicon, corpus.lexicon.to_toml()).unwrap();
    let files = ["report.json", "report.txt", "cv_predictions.csv", "reliability.csv"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in ["first", "second"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_txncat"))
            .current_dir(dir.path())
            .args(["--data", data.to_str().unwrap(), "--seed", "42", "evaluate", "--k", "5", "--augment", "--offline"])
            .args(["--lexicon", lexicon.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .expect("binary runs");
        if !status.status.success() {
            return verdict(false, format!("evaluate failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        runs.push(files.iter().map(|f| std::fs::read(out.join(f)).unwrap_or_default()).collect());
    }
    let same = runs[0] == runs[1] && runs[0].iter().all(|f| !f.is_empty());
    let bytes: usize = runs[0].iter().map(Vec::len).sum();
    verdict(same, format!("two augmented 5-fold runs, {} files, {bytes} bytes, byte-identical", files.len()))
}

/// Leaks found in one fold: synthetic sources, fit ids or calibration ids
/// that are also test ids.
fn leaks(trace: &FoldTrace) -> Vec<String> {
    let test: BTreeSet<&str> = trace.test_ids.iter().map(String::as_str).collect();
    let fit: BTreeSet<&str> = trace.fit_ids.iter().map(String::as_str).collect();
    let mut found = Vec::new();
    for id in &trace.synthetic_source_ids {
        if test.contains(id.as_str()) {
            found.push(format!("synthetic source {id} is a test id"));
        } else if !fit.contains(id.as_str()) {
            found.push(format!("synthetic source {id} is not a fit id"));
        }
    }
    for id in trace.fit_ids.iter().chain(&trace.calibration_ids) {
        if test.contains(id.as_str()) {
            found.push(format!("training id {id} is a test id"));
        }
    }
    found
}

fn criterion_9(focal: &CvOutcome) -> Verdict {
    let mut leaked = Vec::new();
    let mut sourced = 0;
    for trace in &focal.traces {
        sourced += trace.synthetic_source_ids.len();
        leaked.extend(leaks(trace));
    }
    let mut mutant = focal.traces[0].clone();
    mutant.synthetic_source_ids.push(mutant.test_ids[0].clone());
    let caught = !leaks(&mutant).is_empty();
    verdict(
        leaked.is_empty() && sourced > 0 && caught,
        format!(
            "{} folds, {sourced} synthetic sources traced, {} leaks; planted leak detected: {caught}",
            focal.traces.len(),
            leaked.len()
        ),
    )
}

fn run_e2e(corpus: &common::Corpus) -> (CvOutcome, CvOutcome, Duration) {
    let clean = CleanConfig::default();
    let generator = OfflineGenerator::new(corpus.lexicon.clone(), 42);
    let started = Instant::now();
    let mut focal = CvConfig { augment: true, ..CvConfig::default() };
    focal.train.loss = LossKind::Focal;
    let focal = run_cv(&corpus.transactions, &corpus.categories, &clean, &focal, Some(&generator)).expect("focal CV runs");
    let mut ce = CvConfig::default();
    ce.train.loss = LossKind::CrossEntropy;
    let ce = run_cv(&corpus.transactions, &corpus.categories, &clean, &ce, None).expect("ce CV runs");
    (focal, ce, started.elapsed())
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, v: Verdict| {
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    let corpus = common::desk_corpus(42);
    let (focal, ce, elapsed) = run_e2e(&corpus);
    report(4, criterion_4(&focal, &ce, elapsed));
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8(&corpus));
    report(9, criterion_9(&focal));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
