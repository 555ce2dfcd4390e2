use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memiss_cli::output::read_summary;

fn memiss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memiss")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = memiss(&["simulate", "--seed", "7", "--n", "50", "--replicates", "2", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["replicate_0000.csv", "replicate_0001.csv", "simulate.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = std::fs::read_to_string(a.join("replicate_0000.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "y,w,z,x_true");
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn fit_both_engines_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("nhanes2_imputation.toml");
    let data = fixture("nhanes2.csv");
    let o = memiss(&["fit", "--config", &config, "--data", &data, "--engine", "both", "--draws", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("cross-engine agreement"));
    for f in ["summary.csv", "meta.json", "latent.csv", "draws.csv", "agreement.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows = read_summary(std::fs::File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().all(|r| r.q025 <= r.q975));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 25);
    assert_eq!(meta["config"]["columns"]["response"], "chl");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("nhanes2.csv");

    let missing = memiss(&["fit", "--config", "/nonexistent.toml", "--data", &data, "--out", path(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_column = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(fixture("nhanes2_imputation.toml")).unwrap().replace("\"bmi\"", "\"weight\"");
    std::fs::write(&bad_column, text).unwrap();
    let o = memiss(&["fit", "--config", path(&bad_column), "--data", &data, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weight"));

    let no_layer = dir.path().join("plain.toml");
    let text = std::fs::read_to_string(fixture("nhanes2_complete_case.toml")).unwrap().replace("complete_case = true\n", "");
    std::fs::write(&no_layer, text).unwrap();
    let o = memiss(&["fit", "--config", path(&no_layer), "--data", &data, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "missing w without a classical layer is a data error");

    assert_eq!(memiss(&["fit", "--engine", "nuts"]).status.code(), Some(1));
    assert_eq!(memiss(&["study", "--engine", "both", "--out", path(dir.path())]).status.code(), Some(1));
}

#[test]
fn study_writes_aggregate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = memiss(&["study", "--replicates", "4", "--n", "200", "--seed", "3", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("study_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "model,parameter,truth,mean,sd,q025,q975,coverage,replicates");
    assert_eq!(summary.lines().count(), 10);
    let reps = std::fs::read_to_string(dir.path().join("study_replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 4 * 3 * 3);
}

#[test]
fn check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = memiss(&["check", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
