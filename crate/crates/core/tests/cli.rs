use std::path::{Path, PathBuf};
use std::process::Command;

use kconflict::eval::ScoreSheet;
use kconflict::pipeline::read_jsonl;
use serde_json::Value;

const EXTRACT_DIGEST_SEED_7: &str = "cb26e5bc504f3c917589dc212eecf9e315f069ce96010f0991975c014a57a09c";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_kconflict")).args(args).env("RUST_LOG", "warn").output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout}"));
    (out.status.code().unwrap(), v)
}

#[test]
fn synthesize_then_evaluate_offline() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("toy_kg/run.toml");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.path().to_str().unwrap());
    let (code, v) = run(&["--config", cfg, "--out", out_s, "synthesize"]);
    assert_eq!(code, 0, "{v}");
    let verify = &v["summary"][4];
    assert_eq!(verify["stage"], "verify");
    assert!(verify["admitted"].as_u64().unwrap() > 0);
    assert_eq!(verify["admitted"], verify["fully_covered"]);

    let (code, v) = run(&["--config", cfg, "--out", out_s, "--gateway", "record", "evaluate"]);
    assert_eq!(code, 0, "{v}");
    let (code, v) = run(&["--config", cfg, "--out", out_s, "report", "--group-by", "conflict_type,domain"]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["summary"]["tables"], 4);
    assert!(out.path().join("report.json").exists());
}

#[test]
fn extract_digest_is_pinned() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("toy_kg/run.toml");
    let (code, v) =
        run(&["--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--seed", "7", "--workers", "3", "extract"]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["summary"]["digest"], EXTRACT_DIGEST_SEED_7);
}

#[test]
fn config_errors_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "[paths]\ntriplets = \"missing.tsv\"\n[extract]\ncount = 0\n[eval]\nmodels = []\nlength_bins = 0\n",
    )
    .unwrap();
    let (code, v) = run(&["--config", p.to_str().unwrap(), "extract"]);
    assert_eq!(code, 2);
    assert_eq!(v["kind"], "config");
    assert_eq!(v["errors"].as_array().unwrap().len(), 4, "{v}");
}

fn replay_config(dir: &Path) -> PathBuf {
    let cache = fixtures().join("eval/llm_cache");
    let p = dir.join("replay.toml");
    let text = format!(
        "[gateway]\nmode = \"replay\"\ncache_dir = {:?}\n[eval]\nstrategies = [\"binary\", \"multi_step\"]\nlength_bins = 3\n",
        cache.to_str().unwrap()
    );
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn replayed_scores_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = replay_config(dir.path());
    let records = fixtures().join("eval/records.jsonl");
    let out = dir.path().join("out");
    let (code, v) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--records",
        records.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{v}");
    let got: Vec<ScoreSheet> = read_jsonl(&out.join("scores.jsonl")).unwrap();
    let want: Vec<ScoreSheet> = read_jsonl(&fixtures().join("eval/scores.golden.jsonl")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn replay_miss_fails_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = replay_config(dir.path());
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("temperature = 0.5\n");
    std::fs::write(&cfg, text).unwrap();
    let records = fixtures().join("eval/records.jsonl");
    let out = dir.path().join("out");
    let (code, v) = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "evaluate",
        "--records",
        records.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(v["kind"], "items");
    assert_eq!(v["errors"].as_array().unwrap().len(), 12);
}

#[test]
fn stats_and_adapt() {
    let dir = tempfile::tempdir().unwrap();
    let (code, v) = run(&["stats", fixtures().join("eval/records.jsonl").to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["summary"]["total"], 6);

    let input = dir.path().join("econ.jsonl");
    std::fs::write(
        &input,
        "{\"id\": \"e1\", \"evidence_1\": \"Rates rose in May.\", \"evidence_2\": \"Rates fell in May.\"}\n{\"id\": \"e2\"}\n",
    )
    .unwrap();
    let (code, v) = run(&[
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "adapt",
        "--source",
        "econ",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["summary"]["records"], 1);
    assert_eq!(v["summary"]["row_errors"], 1);
}
