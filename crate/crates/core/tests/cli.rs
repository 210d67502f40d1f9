use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qmag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmag")).args(args).output().unwrap()
}

fn preset(name: &str) -> String {
    format!("{}/presets/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_reproducible_and_carries_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = preset("photocurrent.toml");
    let first = qmag(&["simulate", "--config", &cfg, "--seed", "99", "--out", out]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stdout));
    let a = csvs(dir.path());
    let second = qmag(&["--threads", "3", "simulate", "--config", &cfg, "--seed", "99", "--out", out]);
    assert!(second.status.success());
    assert_eq!(a, csvs(dir.path()));

    let names: Vec<_> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["filter.csv", "photocurrent.csv", "simulate.json", "trajectory.csv"]);
    let text = String::from_utf8(a[3].1.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert!(lines.next().unwrap().starts_with("# params: {"));
    assert_eq!(lines.next().unwrap(), "# seed: 99");
}

#[test]
fn ensemble_bytes_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = preset("benchmark.toml");
    let run = |threads: &str| {
        qmag(&["--threads", threads, "ensemble", "--config", &cfg, "--n-traj", "130", "--out", out]);
        csvs(dir.path())
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    assert!(one.iter().any(|(n, _)| n == "ensemble.csv"));
}

#[test]
fn gamma_convention_flag_rescales_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = preset("photocurrent.toml");
    let gamma = |conv: &str| {
        qmag(&["simulate", "--config", &cfg, "--gamma-convention", conv, "--out", out]);
        let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("simulate.json")).unwrap()).unwrap();
        doc["params"]["gamma"].as_f64().unwrap()
    };
    let ratio = gamma("cycles") / gamma("angular");
    assert!((ratio - std::f64::consts::TAU).abs() < 1e-12);
}

#[test]
fn failing_checks_exit_nonzero_with_a_failure_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // At B = 1 µG the least-squares slope is pinned by its bias, not by J.
    let res = qmag(&["scaling", "--config", &preset("scaling.toml"), "--n-traj", "64", "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let last: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(last["command"], "scaling");
    assert!(last["failures"].as_array().unwrap().iter().any(|f| f["name"] == "slope_regression"));
}

#[test]
fn informational_failures_do_not_gate() {
    let dir = tempfile::tempdir().unwrap();
    let res = qmag(&["oracle-check", "--config", &preset("oracle_half.toml"), "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("INFO-FAIL gaussian_agreement"), "{stdout}");
    assert!(res.status.success());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[physical]\nj_total = -1\n").unwrap();
    let res = qmag(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
}
