mod common;

use std::fs;

use common::{iqa, neural_fixture, run, stderr, stdout, synthetic_dataset};
use iqa_cli::commands::{explain_with, score_with};
use iqa_cli::{Cli, Explanation, RunConfig};
use iqa_core::provider::check_dim;
use iqa_core::{
    DescriptiveScore, EmbeddingProvider, EmbeddingVector, ImageInput, ProviderDescriptor,
    ProviderError, QualityReport,
};
use clap::Parser;
use serde_json::Value;

fn report(values: &[(&str, f64)], overall: f64) -> QualityReport {
    QualityReport {
        image_id: "fig1a.png".into(),
        per_feature: values
            .iter()
            .map(|(l, v)| DescriptiveScore {
                feature_label: (*l).into(),
                value: *v,
            })
            .collect(),
        overall,
        bank_fingerprint: "f".into(),
        model_id: "m".into(),
    }
}

#[test]
fn explain_orders_ascending_and_flags_low_scores() {
    let r = report(&[("sharpness", 0.07), ("noise", 7.81), ("brightness", 32.08)], 13.32);
    let e = Explanation::from_report(&r, 25.0);
    let order: Vec<&str> = e.findings.iter().map(|f| f.feature_label.as_str()).collect();
    assert_eq!(order, ["sharpness", "noise", "brightness"]);
    assert!(e.findings[0].flagged);
    assert_eq!(e.findings[0].message.as_deref(), Some("low sharpness score: likely blur"));
    assert!(e.findings[1].flagged);
    assert!(!e.findings[2].flagged);

    let text = e.render();
    let first = text.lines().nth(1).unwrap();
    assert!(first.contains("sharpness") && first.contains("0.07") && first.contains("likely blur"));
    assert!(text.starts_with("fig1a.png: overall quality 13.32"));
}

#[test]
fn explain_sorts_by_value_not_bank_order() {
    let r = report(&[("sharpness", 61.0), ("noise", 12.5), ("brightness", 40.0)], 37.8);
    let e = Explanation::from_report(&r, 25.0);
    let order: Vec<&str> = e.findings.iter().map(|f| f.feature_label.as_str()).collect();
    assert_eq!(order, ["noise", "brightness", "sharpness"]);
    assert_eq!(e.flagged().count(), 1);
}

#[test]
fn threshold_is_strict() {
    let r = report(&[("quality", 25.0)], 25.0);
    assert_eq!(Explanation::from_report(&r, 25.0).flagged().count(), 0);
    let custom = Explanation::from_report(&report(&[("contrast", 3.0)], 3.0), 25.0);
    assert_eq!(custom.findings[0].message.as_deref(), Some("low contrast score"));
}

/// Text encoder that maps every prompt to the same vector, so each pair
/// scores exactly 50.
struct Symmetric(ProviderDescriptor);

impl Symmetric {
    fn new() -> Self {
        Self(ProviderDescriptor::new("symmetric", 3, false).unwrap())
    }
}

impl EmbeddingProvider for Symmetric {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.0
    }

    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError> {
        image.decode()?;
        let v = EmbeddingVector::new(vec![1.0, 2.0, 0.5])?;
        check_dim(&self.0, &v)?;
        Ok(v)
    }

    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        prompts
            .iter()
            .map(|_| EmbeddingVector::new(vec![0.3, -1.0, 2.0]).map_err(Into::into))
            .collect()
    }
}

fn config(args: &[&str]) -> RunConfig {
    let mut argv = vec!["iqa"];
    argv.extend_from_slice(args);
    argv.push("bank");
    RunConfig::from_args(&Cli::parse_from(argv).run).unwrap()
}

#[test]
fn symmetric_fixture_flags_nothing_until_threshold_is_raised() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 8);
    let image = dir.path().join("img_000.png");

    let mut out = Vec::new();
    explain_with(&Symmetric::new(), &config(&["--format", "structured"]), &image, &mut out).unwrap();
    let v: Value = serde_json::from_slice(&out).unwrap();
    let findings = v["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 3);
    for f in findings {
        assert_eq!(f["value"].as_f64().unwrap(), 50.0);
        assert_eq!(f["flagged"], Value::Bool(false));
    }

    let mut out = Vec::new();
    let cfg = config(&["--format", "structured", "--threshold", "60"]);
    explain_with(&Symmetric::new(), &cfg, &image, &mut out).unwrap();
    let v: Value = serde_json::from_slice(&out).unwrap();
    assert!(v["findings"].as_array().unwrap().iter().all(|f| f["flagged"] == Value::Bool(true)));

    let mut out = Vec::new();
    explain_with(&Symmetric::new(), &config(&[]), &image, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("no feature below 25.00"));
}

#[test]
fn score_with_reports_each_image_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 2, 8);
    let images = vec![
        dir.path().join("img_000.png"),
        dir.path().join("missing.png"),
        dir.path().join("img_001.png"),
    ];
    let mut out = Vec::new();
    let outcome = score_with(&Symmetric::new(), &config(&["--format", "structured"]), &images, &mut out).unwrap();
    assert_eq!((outcome.succeeded, outcome.failed), (2, 1));
    let lines: Vec<Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["overall"].as_f64().unwrap(), 50.0);
    assert!(lines[1]["error"].as_str().unwrap().contains("missing.png"));
    assert_eq!(lines[2]["image_id"], "img_001.png");
}

fn parse_lines(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn structured_score_round_trips_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 3, 16);
    let out = run(iqa()
        .current_dir(dir.path())
        .args(["--format", "structured", "score", "img_000.png", "img_001.png", "img_002.png"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = parse_lines(&stdout(&out));
    assert_eq!(lines.len(), 3);
    for line in lines {
        let d: Vec<f64> = line["per_feature"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["value"].as_f64().unwrap())
            .collect();
        let labels: Vec<&str> = line["per_feature"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["feature_label"].as_str().unwrap())
            .collect();
        assert_eq!(labels, ["sharpness", "noise", "brightness"]);
        let mean = d.iter().sum::<f64>() / 3.0;
        assert!((mean - line["overall"].as_f64().unwrap()).abs() < 1e-9);
        assert!(line["model_id"].as_str().unwrap().starts_with("mock-"));
        assert_eq!(line["bank_fingerprint"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn clip_iqa_bank_gives_one_score_equal_to_overall() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 16);
    let out = run(iqa()
        .current_dir(dir.path())
        .args(["--bank", "clip-iqa", "--format", "structured", "score", "img_000.png"]));
    assert!(out.status.success());
    let line = &parse_lines(&stdout(&out))[0];
    let d = line["per_feature"].as_array().unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0]["value"], line["overall"]);
}

#[test]
fn human_score_uses_two_decimals() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 16);
    let out = run(iqa().current_dir(dir.path()).args(["score", "img_000.png"]));
    let text = stdout(&out);
    let q = text.split("q=").nth(1).unwrap().split(' ').next().unwrap();
    assert_eq!(q.split('.').nth(1).unwrap().len(), 2, "{text}");
}

#[test]
fn structured_score_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 4, 16);
    let args = ["--format", "structured", "score", "img_000.png", "img_001.png", "img_002.png", "img_003.png"];
    let a = run(iqa().current_dir(dir.path()).args(args));
    let b = run(iqa().current_dir(dir.path()).args(args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(iqa().current_dir(dir.path()).args(["--seed", "3"]).args(args));
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn exit_status_reflects_work_done() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 8);
    fs::write(dir.path().join("junk.png"), b"not an image").unwrap();

    let mixed = run(iqa().current_dir(dir.path()).args(["score", "img_000.png", "junk.png"]));
    assert_eq!(mixed.status.code(), Some(0));
    assert!(stdout(&mixed).contains("junk.png: error"));

    let none = run(iqa().current_dir(dir.path()).args(["score", "junk.png", "gone.png"]));
    assert_eq!(none.status.code(), Some(1));

    let bad_config = [
        vec!["--workers", "0", "score", "img_000.png"],
        vec!["--backend", "neural", "score", "img_000.png"],
        vec!["--bank", "nope.json", "score", "img_000.png"],
        vec!["--preprocess", "native", "score", "img_000.png"],
    ];
    for args in bad_config {
        let out = run(iqa().current_dir(dir.path()).args(&args));
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).starts_with("error: "));
    }
    let explain_missing = run(iqa().current_dir(dir.path()).args(["explain", "gone.png"]));
    assert_ne!(explain_missing.status.code(), Some(0));
}

#[test]
fn explain_command_prints_sorted_features() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 16);
    let out = run(iqa().current_dir(dir.path()).args(["--threshold", "100", "explain", "img_000.png"]));
    assert!(out.status.success());
    let text = stdout(&out);
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(text.matches("<- low").count(), 3);
}

fn metric_line<'a>(text: &'a str, name: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(name))
        .unwrap()
        .trim()
}

#[test]
fn evaluate_writes_files_and_prints_three_decimals() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 10, 16);
    let out = run(iqa()
        .current_dir(dir.path())
        .args(["--out", "run1", "evaluate", "manifest.csv", "."]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let srocc = metric_line(&text, "SROCC:");
    assert_eq!(srocc.split('.').nth(1).unwrap().len(), 3, "{text}");
    assert_eq!(metric_line(&text, "PLCC:").split('.').nth(1).unwrap().len(), 3);

    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("run1/report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["n"], 10);
    assert_eq!(report["run"]["bank_name"], "default");
    assert_eq!(report["run"]["normalizes_output"], Value::Bool(true));
    let csv = fs::read_to_string(dir.path().join("run1/predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("image_id,mos,q,sharpness,noise,brightness\n"));

    let again = run(iqa()
        .current_dir(dir.path())
        .args(["--out", "run2", "evaluate", "manifest.csv", "."]));
    assert_eq!(out.stdout.len(), again.stdout.len());
    assert_eq!(metric_line(&stdout(&again), "SROCC:"), srocc);
}

#[test]
fn evaluating_against_own_predictions_correlates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 10, 16);
    let first = run(iqa().current_dir(dir.path()).args(["--out", "a", "evaluate", "manifest.csv", "."]));
    assert!(first.status.success());
    let csv = fs::read_to_string(dir.path().join("a/predictions.csv")).unwrap();
    let mut manifest = String::from("image_name,MOS\n");
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        manifest.push_str(&format!("{},{}\n", cols[0], cols[2]));
    }
    fs::write(dir.path().join("self.csv"), manifest).unwrap();
    let out = run(iqa().current_dir(dir.path()).args(["--out", "b", "evaluate", "self.csv", "."]));
    let text = stdout(&out);
    assert_eq!(metric_line(&text, "SROCC:"), "1.000");
    assert_eq!(metric_line(&text, "PLCC:"), "1.000");
}

#[test]
fn evaluate_with_nothing_scoreable_fails_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.csv"), "image_name,MOS\na.png,1\nb.png,2\n").unwrap();
    let out = run(iqa().current_dir(dir.path()).args(["evaluate", "m.csv", "."]));
    assert_ne!(out.status.code(), Some(0));
    let err = stderr(&out);
    assert!(err.contains("none of the 2 images"), "{err}");
    assert!(err.contains("2x unreadable (e.g. cannot read"), "{err}");

    let missing_dir = run(iqa().current_dir(dir.path()).args(["evaluate", "m.csv", "nowhere"]));
    assert_eq!(missing_dir.status.code(), Some(2));
}

#[test]
fn cache_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 2, 8);
    let cache = dir.path().join("cache");
    let out = run(iqa()
        .current_dir(dir.path())
        .env("IQA_CACHE_DIR", &cache)
        .args(["score", "img_000.png", "img_001.png"]));
    assert!(out.status.success());
    // 6 prompts + 2 images
    let entries = fs::read_dir(&cache).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "emb")
    });
    assert_eq!(entries.count(), 8);

    let flag = dir.path().join("flagcache");
    let out = run(iqa()
        .current_dir(dir.path())
        .env("IQA_CACHE_DIR", &cache)
        .args(["--cache-dir", flag.to_str().unwrap(), "score", "img_000.png"]));
    assert!(out.status.success());
    assert!(flag.is_dir());
}

#[test]
fn bank_command_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(iqa().args(["--bank", "clip-iqa", "--out", dir.path().join("b.txt").to_str().unwrap(), "bank"]));
    assert!(out.status.success());
    let printed = fs::read_to_string(dir.path().join("b.txt")).unwrap();
    let (header, json) = printed.split_once('\n').unwrap();
    let fingerprint = header.strip_prefix("# fingerprint ").unwrap();
    fs::write(dir.path().join("bank.json"), json).unwrap();
    let bank = iqa_core::bank::load_bank(dir.path().join("bank.json")).unwrap();
    assert_eq!(bank.fingerprint(), fingerprint);
    assert_eq!(bank, iqa_core::bank::clipiqa_bank());
}

#[test]
fn custom_bank_file_drives_labels() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 1, 8);
    fs::write(
        dir.path().join("bank.json"),
        r#"{"name": "two", "pairs": [
            {"feature_label": "colorfulness", "positive_text": "A colorful photo.", "negative_text": "A dull photo."},
            {"feature_label": "contrast", "positive_text": "A high contrast photo.", "negative_text": "A low contrast photo."}
        ]}"#,
    )
    .unwrap();
    let out = run(iqa()
        .current_dir(dir.path())
        .args(["--bank", "bank.json", "--format", "structured", "score", "img_000.png"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let line = &parse_lines(&stdout(&out))[0];
    let labels: Vec<&str> = line["per_feature"].as_array().unwrap().iter().map(|f| f["feature_label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["colorfulness", "contrast"]);
}

#[test]
fn neural_backend_runs_exported_encoders() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset(dir.path(), 2, 12);
    let args = [
        "--backend", "neural",
        "--image-model", neural_fixture("tiny_image.onnx").to_str().unwrap(),
        "--text-model", neural_fixture("tiny_text.onnx").to_str().unwrap(),
        "--tokenizer", neural_fixture("tiny_bpe.txt.gz").to_str().unwrap(),
    ]
    .map(str::to_owned);
    let out = run(iqa()
        .current_dir(dir.path())
        .args(&args)
        .args(["--normalize-embeddings", "--format", "structured", "score", "img_000.png", "img_001.png"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = parse_lines(&stdout(&out));
    assert_eq!(lines.len(), 2);
    let model_id = lines[0]["model_id"].as_str().unwrap();
    assert!(model_id.contains("/native") && model_id.ends_with("+l2"), "{model_id}");

    let eval = run(iqa()
        .current_dir(dir.path())
        .args(&args)
        .args(["--preprocess", "resize:8", "--workers", "2", "--out", "n", "evaluate", "manifest.csv", "."]));
    assert!(eval.status.success(), "{}", stderr(&eval));
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("n/report.json")).unwrap()).unwrap();
    assert!(report["run"]["preprocessing"].as_str().unwrap().starts_with("resize:8"));
    assert_eq!(report["run"]["normalizes_output"], Value::Bool(false));
}
