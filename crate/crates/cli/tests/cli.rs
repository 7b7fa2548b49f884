use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.json")
}

fn eenr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eenr"))
        .args(args)
        .env_remove("EENR_SEED")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = eenr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON summary")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny();
    let cfg = s(&cfg);
    let data = d.join("data");
    let g = ok_json(&["gen-data", "--config", cfg, "--out", s(&data)]);
    assert_eq!(g["news"], 60);
    for f in ["news.jsonl", "impressions.jsonl", "ee_train.jsonl", "ee_test.jsonl", "schema.json", "truth.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let ee = d.join("ee");
    let t = ok_json(&["train-ee", "--config", cfg, "--train", s(&data.join("ee_train.jsonl")), "--out", s(&ee)]);
    assert_eq!(t["sentences"], 40);
    let r = ok_json(&["eval-ee", "--model", s(&ee), "--test", s(&data.join("ee_test.jsonl"))]);
    assert!(r["span_f1"].as_f64().unwrap() >= 0.0);

    let news = d.join("news_events.jsonl");
    let x = ok_json(&["extract", "--model", s(&ee), "--news", s(&data.join("news.jsonl")), "--out", s(&news)]);
    assert_eq!(x["news"], 60);

    let imps = data.join("impressions.jsonl");
    let graph = d.join("graph.tsv");
    ok_json(&["build-graph", "--config", cfg, "--news", s(&news), "--impressions", s(&imps), "--out", s(&graph)]);
    assert!(graph.exists());
    let emb = d.join("emb.json");
    let e = ok_json(&[
        "embed-graph", "--config", cfg, "--graph", s(&graph), "--schema", s(&data.join("schema.json")), "--out", s(&emb),
    ]);
    assert_eq!(e["types"], 4);
    assert_eq!(e["dim"], 4);

    let rec = d.join("rec");
    let tr = ok_json(&[
        "train-rec", "--config", cfg, "--news", s(&news), "--impressions", s(&imps), "--embedding", s(&emb),
        "--variant", "EENR", "--out", s(&rec),
    ]);
    assert_eq!(tr["variant"], "EENR");
    assert!(rec.join("rec.params").exists() && rec.join("history.json").exists());

    let preds = d.join("preds.jsonl");
    let m = ok_json(&[
        "evaluate", "--config", cfg, "--model", s(&rec), "--news", s(&news), "--impressions", s(&imps),
        "--predictions", s(&preds),
    ]);
    let auc = m["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(m["n_impressions"], 24);
    let lines = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(lines.lines().count(), 24);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let total: f64 = first["ranked"].as_array().unwrap().iter().map(|r| r["prob"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let again = ok_json(&[
        "evaluate", "--config", cfg, "--model", s(&rec), "--news", s(&news), "--impressions", s(&imps),
    ]);
    assert_eq!(again["auc"], m["auc"]);
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let out = dir.path().join("ab");
    let v = ok_json(&["ablate", "--config", s(&cfg), "--seed", "5", "--out", s(&out)]);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("fraction,variant,"));
    assert!(out.join("ablation.json").exists());
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = Command::new(env!("CARGO_BIN_EXE_eenr"));
        c.args(["gen-data", "--config", s(&tiny()), "--out", s(&out)]);
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        match env {
            Some(e) => c.env("EENR_SEED", e),
            None => c.env_remove("EENR_SEED"),
        };
        let o = c.output().unwrap();
        assert!(o.status.success());
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        (v["seed"].as_u64().unwrap(), std::fs::read(out.join("impressions.jsonl")).unwrap())
    };
    assert_eq!(gen("a", None, None).0, 3);
    assert_eq!(gen("b", Some("11"), None).0, 11);
    assert_eq!(gen("c", Some("11"), Some("12")).0, 12);
    assert_eq!(gen("d", None, Some("12")).1, gen("e", None, Some("12")).1);
}

#[test]
fn usage_errors_exit_2() {
    let out = eenr(&["train-rec", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(eenr(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing");
    let out = eenr(&["evaluate", "--model", s(&missing), "--news", "x", "--impressions", "y"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    assert!(out.stdout.is_empty());

    let bad = d.join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(eenr(&["gen-data", "--config", s(&bad), "--out", s(d)]).status.code(), Some(1));

    let out = Command::new(env!("CARGO_BIN_EXE_eenr"))
        .args(["gen-data", "--out", s(&d.join("g"))])
        .env("EENR_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok_json(&["gen-data", "--config", s(&tiny()), "--out", s(&data)]);
    let emb = d.join("emb.json");
    std::fs::write(&emb, "{}").unwrap();
    let out = eenr(&[
        "train-rec", "--config", s(&tiny()), "--news", s(&data.join("news.jsonl")), "--impressions",
        s(&data.join("impressions.jsonl")), "--embedding", s(&emb), "--variant", "NOPE", "--out", s(&d.join("r")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NOPE"));
}
