//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! each runtime budget is measured without competing work.
//!
//! A criterion listed in `KNOWN_FAILURES` may fail without failing the run,
//! but only with the exact failure recorded there.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::checks::{annotation, gradients, metrics, oracles, taxonomy, textprep};
use common::PUBLISHED;
use serde_json::{json, Value};

/// Criteria whose published inputs cannot meet their tolerance, with the
/// only failure detail accepted for each.
const KNOWN_FAILURES: [(&str, &str); 1] = [("metric algebra", "RF misses precision, mcc")];

const FAMILIES: [&str; 7] = ["SVM", "LR", "NN", "RF", "GBT", "DNN", "GAN"];

struct Outcome {
    name: &'static str,
    result: Result<String, String>,
    elapsed: Duration,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    match payload.downcast::<String>() {
        Ok(s) => *s,
        Err(p) => p.downcast_ref::<&str>().map_or_else(|| "panicked".to_string(), |s| s.to_string()),
    }
}

/// Runs `check`, turning a panic into a failure and enforcing `budget`.
fn criterion(name: &'static str, budget: Duration, check: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_message(p)));
    let elapsed = start.elapsed();
    let result = match result {
        Ok(_) if elapsed > budget => Err(format!("took {elapsed:.1?}, budget {budget:?}")),
        r => r,
    };
    let outcome = Outcome { name, result, elapsed };
    let (tag, detail) = match &outcome.result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} ({:.2?}): {detail}", outcome.elapsed);
    outcome
}

fn hvd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvd"))
        .args(args)
        .current_dir(dir)
        .env_remove("HVD_EMBEDDING_URL")
        .env_remove("HVD_PORT")
        .output()
        .expect("hvd runs")
}

fn succeed(out: Output) -> Result<Vec<u8>, String> {
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(format!("hvd exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn metric_algebra() -> Result<String, String> {
    let misses: Vec<String> = (0..PUBLISHED.len())
        .filter_map(|i| {
            let m = metrics::algebra_misses(i);
            (!m.is_empty()).then(|| format!("{} misses {}", PUBLISHED[i].model, m.join(", ")))
        })
        .collect();
    metrics::spot_values();
    if misses.is_empty() {
        Ok(format!("{} columns within {}", PUBLISHED.len(), metrics::TOL))
    } else {
        Err(misses.join("; "))
    }
}

fn baseline() -> Result<String, String> {
    metrics::baseline_and_improvement();
    Ok("0.0017 / 0.5 / 0.0034, improvement within 0.5".into())
}

/// Every family on the synthetic clusters, then the configured labeled
/// file end to end. Only the synthetic run has a runtime budget.
fn benchmark(dir: &Path) -> Result<String, String> {
    let start = Instant::now();
    let synthetic = synthetic_benchmark(dir)?;
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(180) {
        return Err(format!("synthetic suite took {elapsed:.1?}, budget 180s"));
    }
    let labeled = labeled_end_to_end(dir)?;
    Ok(format!("{synthetic} in {elapsed:.1?}; {labeled}"))
}

fn synthetic_benchmark(dir: &Path) -> Result<String, String> {
    let stdout = succeed(hvd(dir, &["evaluate", "--model", "all", "--synthetic", "--folds", "10", "--seed", "42"]))?;
    let report: Value = serde_json::from_slice(&stdout).map_err(|e| e.to_string())?;
    if report["n_examples"] != 800 || report["k"] != 10 {
        return Err(format!("unexpected shape: n={} k={}", report["n_examples"], report["k"]));
    }
    let mut shown = Vec::new();
    let mut low = Vec::new();
    for m in report["models"].as_array().ok_or("no models")? {
        let name = m["model"].as_str().unwrap_or("?");
        let f1 = m["metrics"]["f1"].as_f64().unwrap_or(f64::NAN);
        shown.push(format!("{name} {f1:.3}"));
        if !(f1 >= 0.90) {
            low.push(name.to_string());
        }
    }
    if shown.len() != FAMILIES.len() {
        return Err(format!("{} families evaluated", shown.len()));
    }
    if !low.is_empty() {
        return Err(format!("F1 below 0.90 for {}: {}", low.join(", "), shown.join(", ")));
    }
    Ok(format!("F1 {}", shown.join(", ")))
}

/// A labeled file of distinct violation and clean texts, large enough for
/// ten stratified folds.
fn write_labeled(path: &Path) {
    let violation = ["scam", "stole my money", "fraud charges", "lied about refunds", "fake discount"];
    let clean = ["calm puzzle game", "lovely colors", "smooth levels", "nice music", "easy controls"];
    let mut text = String::new();
    for i in 0..30 {
        for (id, words, label) in [(format!("v{i}"), violation[i % 5], 1), (format!("n{i}"), clean[i % 5], 0)] {
            let row = json!({"id": id, "app_id": format!("app{}", i % 4), "app_category": "Finance", "text": format!("{words} number {i}"), "label": label});
            text.push_str(&format!("{row}\n"));
        }
    }
    std::fs::write(path, text).unwrap();
}

/// Checks a text report has every family column and the baseline section.
fn table_shaped(text: &str) -> Result<(), String> {
    for section in ["Confusion matrix", "Classification metrics", "Baseline comparison"] {
        if !text.contains(section) {
            return Err(format!("no {section:?} section"));
        }
    }
    let header = text.lines().nth(1).unwrap_or("");
    let mut columns: Vec<&str> = header.split_whitespace().collect();
    columns.sort_unstable();
    let mut want = FAMILIES;
    want.sort_unstable();
    if columns != want {
        return Err(format!("columns {columns:?}"));
    }
    for row in ["True negative", "MCC", "Accuracy", "F1 score", "Random", "Improvement"] {
        if !text.lines().any(|l| l.starts_with(row)) {
            return Err(format!("no {row:?} row"));
        }
    }
    Ok(())
}

/// The configured labeled file runs end to end into a full text report.
/// `HVD_LABELED_FILE` points it at a real file; otherwise a generated one
/// stands in.
fn labeled_end_to_end(dir: &Path) -> Result<String, String> {
    let (path, what) = match std::env::var_os("HVD_LABELED_FILE") {
        Some(p) => (std::path::PathBuf::from(p), "supplied"),
        None => {
            let p = dir.join("labeled.jsonl");
            write_labeled(&p);
            (p, "generated")
        }
    };
    let config = dir.join("labeled.toml");
    std::fs::write(&config, format!("[data]\nlabeled = {}\n", json!(path.display().to_string()))).unwrap();
    let config = config.display().to_string();
    let stdout = succeed(hvd(dir, &["--config", &config, "evaluate", "--format", "text", "--seed", "42"]))?;
    let text = String::from_utf8(stdout).map_err(|e| e.to_string())?;
    table_shaped(&text)?;
    Ok(format!("{what} file {} rendered 7 columns and the baseline", path.display()))
}

fn gradient_checks() -> Result<String, String> {
    assert!(gradients::INSTANCES >= 20);
    gradients::logistic_regression();
    gradients::one_hidden_layer_network();
    gradients::deep_network_with_shrinking_layers();
    gradients::gan_discriminator();
    gradients::gan_generator();
    Ok(format!("LR, NN, DNN, GAN discriminator and generator on {} instances each", gradients::INSTANCES))
}

fn oracle_checks() -> Result<String, String> {
    oracles::keyword_filter_matches_construction_oracle_on_1000_reviews();
    oracles::single_tree_matches_exhaustive_cart_on_50_micro_datasets();
    oracles::folds_are_balanced_and_cover_every_example_on_100_pairs();
    Ok("keyword filter on 1000 reviews, 50 CART micro-datasets, 100 fold plans".into())
}

fn preprocessing() -> Result<String, String> {
    textprep::worked_examples_of_each_step();
    textprep::golden_file_matches_bit_exactly();
    Ok("worked examples and golden file match".into())
}

fn taxonomy_report() -> Result<String, String> {
    taxonomy::category_table_file_reproduces_published_counts_and_percentages();
    Ok("10 counts and percentages match".into())
}

fn annotation_machine() -> Result<String, String> {
    annotation::ten_thousand_random_sequences_stay_on_the_allowed_transitions();
    Ok("10000 sequences, exports only VALIDATED/RESOLVED".into())
}

fn determinism(dir: &Path) -> Result<String, String> {
    let args = ["evaluate", "--model", "lr,rf,nn", "--synthetic", "--folds", "10", "--seed", "7"];
    let first = succeed(hvd(dir, &args))?;
    let second = succeed(hvd(dir, &args))?;
    serde_json::from_slice::<Value>(&first).map_err(|e| format!("not JSON: {e}"))?;
    if first == second {
        Ok(format!("{} identical bytes", first.len()))
    } else {
        Err("two runs differ".into())
    }
}

fn main() {
    // Failures are reported through the outcome lines instead.
    panic::set_hook(Box::new(|_| {}));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let second = Duration::from_secs(1);
    let outcomes = [
        criterion("metric algebra", second, metric_algebra),
        criterion("baseline", second, baseline),
        criterion("classifier benchmark", Duration::from_secs(600), || benchmark(d)),
        criterion("gradient checks", Duration::from_secs(30), gradient_checks),
        criterion("oracle equivalence", Duration::from_secs(60), oracle_checks),
        criterion("preprocessing golden", Duration::from_secs(10), preprocessing),
        criterion("taxonomy report", Duration::from_secs(10), taxonomy_report),
        criterion("annotation stage machine", Duration::from_secs(120), annotation_machine),
        criterion("cli determinism", Duration::from_secs(180), || determinism(d)),
    ];
    let _ = panic::take_hook();

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_FAILURES.iter().find(|(name, _)| *name == o.name);
        match (&o.result, known) {
            (Err(detail), Some((_, expected))) if detail == expected => {}
            (Err(detail), _) => unexpected.push(format!("{}: {detail}", o.name)),
            (Ok(_), Some(_)) => println!("note: {} now passes; drop it from KNOWN_FAILURES", o.name),
            (Ok(_), None) => {}
        }
    }
    let passed = outcomes.iter().filter(|o| o.result.is_ok()).count();
    println!("{passed}/{} criteria pass", outcomes.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures:\n{}", unexpected.join("\n"));
        std::process::exit(1);
    }
}
