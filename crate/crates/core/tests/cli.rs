use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rb-maxwell"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
schema = "rb-maxwell/1"
mesh_n = 4
k = 3
tau = 1
n_init = 6
n_pod = 6
n_train = 8
n_test = 5
n_max = 12
h = 0.1
bench_reps = 3
"#;

#[test]
fn check_on_small_mesh_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let status = bin().args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "check"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("check.json").exists());
}

#[test]
fn unknown_config_key_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schema = \"rb-maxwell/1\"\nmesh_size = 4\n");
    let status = bin().args(["--config", cfg.to_str().unwrap(), "check"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_value_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schema = \"rb-maxwell/1\"\nbench_reps = 1\n");
    let status = bin().args(["--config", cfg.to_str().unwrap(), "check"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_gauge_exits_with_validation_code() {
    let status = bin().args(["--gauge", "coulomb", "check"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn solve_writes_labelled_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let status = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "solve", "--t", "0.5", "--system", "cotree"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("solve.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,lambda,freq,label"));
    assert_eq!(lines.count(), 3);
}
