use std::path::Path;
use std::process::{Command, Output};

use c2vl_core::data::{synth_generate, write_dataset, SynthConfig, SynthCorpus};

fn c2vl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2vl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_smoke_seed_7_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = c2vl(&["synth-smoke", "--seed", "7", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = stdout_json(&out);
    assert!(summary["linear"].as_f64().unwrap() >= 95.0);
    assert!(summary["knn"].as_f64().unwrap() >= 95.0);
    for name in ["config.toml", "config.sha256", "last.ckpt.json", "encoder.json", "metrics.csv", "linear.json", "knn.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let digest = std::fs::read_to_string(dir.path().join("config.sha256")).unwrap();
    assert_eq!(digest.trim(), summary["config_digest"]);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = c2vl(&["synth-smoke", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(c2vl(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn out_of_range_beta_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[loss]\nbeta = 1.5\n").unwrap();
    let out = c2vl(&[
        "pretrain", "--config", p(&cfg), "--data", p(dir.path()), "--prompts", "x.jsonl", "--out", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).lines().last().unwrap()).unwrap();
    assert_eq!(err["path"], "loss.beta");
    assert_eq!(err["kind"], "config");

    let out = c2vl(&["synth-smoke", "--loss.beta", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("loss.beta"));
    let out = c2vl(&["synth-smoke", "--optimizer.epochs", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("optimizer.epochs"));
}

#[test]
fn runtime_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = c2vl(&[
        "pretrain", "--data", p(&dir.path().join("missing")), "--prompts", "x.jsonl", "--out", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).lines().last().unwrap()).unwrap();
    assert_eq!(err["status"], "error");
}

#[test]
fn file_pipeline_runs_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = synth_generate(&SynthConfig::new(3, 10, 21)).unwrap();
    let data = root.join("data");
    write_dataset(&data, "synthetic", &corpus.sequences, &corpus.layout, &SynthCorpus::splits()).unwrap();
    let cache = root.join("prompts/cache.jsonl");
    std::fs::create_dir_all(cache.parent().unwrap()).unwrap();

    let out = c2vl(&["generate-prompts", "--dataset", p(&data), "--cache", p(&cache), "--engine", "stub", "--frames", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["generated"], 30);
    let out = c2vl(&["generate-prompts", "--dataset", p(&data), "--cache", p(&cache)]);
    assert_eq!(stdout_json(&out)["cached"], 30);
    assert_eq!(stdout_json(&out)["generated"], 0);

    let run = root.join("run");
    let out = c2vl(&[
        "pretrain", "--data", p(&data), "--prompts", p(&cache), "--out", p(&run), "--deterministic",
        "--optimizer.epochs", "2", "--optimizer.milestones", "[1]", "--optimizer.batch_size", "8",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["epochs"], 2);
    let resolved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("deterministic = true"));
    assert!(resolved.contains("epochs = 2"));

    let ckpt = run.join("last.ckpt.json");
    let out = c2vl(&[
        "evaluate", "--protocol", "linear", "--ckpt", p(&ckpt), "--data", p(&data), "--dump-embeddings",
        "--emit-histograms", "--prompts", p(&cache), "--eval.probe_epochs", "10", "--eval.probe_milestones", "[]",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let eval = run.join("eval");
    for name in ["linear.json", "linear_confusion.csv", "embeddings_test.csv", "histogram_vision.csv", "histogram_language.csv", "config.toml"] {
        assert!(eval.join(name).is_file(), "{name} missing");
    }
    let csv = std::fs::read_to_string(eval.join("embeddings_test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);

    let out = c2vl(&["evaluate", "--protocol", "knn", "--k", "3", "--ckpt", p(&run.join("encoder.json")), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout_json(&out)["accuracy"]["knn"].is_number());

    let out = c2vl(&[
        "evaluate", "--protocol", "semi", "--ckpt", p(&ckpt), "--data", p(&data), "--eval.semi_fractions", "[0.1, 0.5]",
        "--eval.probe_epochs", "5", "--eval.probe_milestones", "[]",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let acc = &stdout_json(&out)["accuracy"];
    assert!(acc["semi_0.1"].is_number() && acc["semi_0.5"].is_number());

    let out = c2vl(&["evaluate", "--protocol", "knn", "--k", "500", "--ckpt", p(&ckpt), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("eval.k"));
}
