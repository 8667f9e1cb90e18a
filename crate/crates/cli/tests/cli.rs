use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn latvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latvar"))
        .args(args)
        .env_remove("LATVAR_JOBS")
        .output()
        .expect("binary runs")
}

fn model(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
        .display()
        .to_string()
}

fn generated(dir: &Path, continuous: bool) -> PathBuf {
    let out = dir.join("synthetic");
    let mut args = vec!["generate", "--n", "3000", "--seed", "11", "--waves", "YEAR=1991,1998,2008"];
    if continuous {
        args.push("--continuous");
    }
    args.extend(["--out", out.to_str().unwrap()]);
    let o = latvar(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn generate_writes_data_and_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generated(tmp.path(), false);
    let data = std::fs::read_to_string(dir.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 3001);
    assert!(data.lines().next().unwrap().contains("YEAR"));
    assert!(dir.join("schema.toml").exists());
}

#[test]
fn sem_reports_degrees_of_freedom_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generated(tmp.path(), true);
    let data = dir.join("data.csv");
    let o = latvar(&[
        "sem",
        "--data",
        data.to_str().unwrap(),
        "--model",
        &model("sem_five_edges.txt"),
        "--format",
        "json",
    ]);
    let v = json(&o);
    assert_eq!(v["df"], 60);
    assert_eq!(v["n_used"], 3000);
}

#[test]
fn filtered_cfa_uses_one_wave() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generated(tmp.path(), false);
    let o = latvar(&[
        "cfa",
        "--data",
        dir.join("data.csv").to_str().unwrap(),
        "--schema",
        dir.join("schema.toml").to_str().unwrap(),
        "--filter",
        "YEAR=2008",
        "--model",
        &model("cfa4.txt"),
        "--format",
        "json",
    ]);
    let v = json(&o);
    assert_eq!(v["fit"]["n_total"], 1000);
    assert_eq!(v["fit"]["df"], 59);
}

#[test]
fn search_ranks_restricted_enumeration() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generated(tmp.path(), true);
    // Measurement blocks only: the search supplies the structural part.
    let blocks: String = std::fs::read_to_string(model("cfa4.txt"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("=~"))
        .map(|l| format!("{l}\n"))
        .collect();
    let blocks_path = tmp.path().join("blocks.txt");
    std::fs::write(&blocks_path, blocks).unwrap();
    let o = latvar(&[
        "search",
        "--data",
        dir.join("data.csv").to_str().unwrap(),
        "--model",
        blocks_path.to_str().unwrap(),
        "--max-edges",
        "1",
        "--format",
        "json",
    ]);
    let v = json(&o);
    // Empty structure plus six single covariances and twelve single regressions.
    assert_eq!(v["count"]["realized"], 19);
    assert!(!v["result"]["tiers"][0].as_array().unwrap().is_empty());
}

#[test]
fn run_writes_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    generated(tmp.path(), false);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
data = "synthetic/data.csv"
schema = "synthetic/schema.toml"
output_dir = "out"
[waves]
column = "YEAR"
efa = [1991, 1998]
confirm = [2008]
[efa]
bootstrap = 5
parallel_resamples = 20
[reliability]
n_boot = 10
[search]
rule = { kind = "mixed", max_edges = 1 }
"#,
    )
    .unwrap();
    let o = latvar(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 2), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    for f in ["summary.json", "summary.txt", "ingest/report.json", "efa/report.json", "efa/pattern.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn overlapping_waves_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    generated(tmp.path(), false);
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "data = \"synthetic/data.csv\"\noutput_dir = \"out\"\n[waves]\ncolumn = \"YEAR\"\nefa = [1991, 2008]\nconfirm = [2008]\n",
    )
    .unwrap();
    let o = latvar(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2008"));
}

#[test]
fn malformed_filter_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generated(tmp.path(), false);
    let o = latvar(&["correlate", "--data", dir.join("data.csv").to_str().unwrap(), "--filter", "YEAR"]);
    assert_eq!(o.status.code(), Some(1));
}
