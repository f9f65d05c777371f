use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_forgetting"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().arg("run").args(args).arg("--out").arg(dir).output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn list_names_the_presets() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["gaussian-ar", "counterexample-parity", "functional-ar"] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
}

#[test]
fn parity_counterexample_reports_na_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--scenario", "counterexample-parity", "--n", "2,5,9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "counterexample-parity.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,seed,n,m,tv_measured,bound_uniform,bound_drift_min,argmin_m,coupling_tail,coupling_tail_se,epsilon_min,lambda_max,B_max"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[4], "1");
        assert_eq!(cells[5], "n/a");
        assert_eq!(cells[6], "n/a");
    }
    assert!(!csv.contains('\r'));
}

#[test]
fn identical_runs_give_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--scenario", "discrete", "--n", "3:12:3", "--replicates", "300", "--seed", "7"];
    assert!(run_in(a.path(), &args).status.success());
    assert!(run_in(b.path(), &args).status.success());
    assert_eq!(read(a.path(), "discrete.csv"), read(b.path(), "discrete.csv"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# small gaussian run\nscenario = gaussian-ar\nn = 4,8\ngrid-size = 401\nparam.alpha = 0.5\nformat = csv\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["--config", cfg.to_str().unwrap(), "--n", "3,6", "--format", "csv,json,svg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "gaussian-ar.csv");
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[2].as_str()).collect::<Vec<_>>(), ["3", "6"]);
    for r in &rows {
        let tv: f64 = r[4].parse().unwrap();
        let bound: f64 = r[6].parse().unwrap();
        assert!(tv <= bound + 1e-9);
        // No replicates: tail columns stay empty.
        assert_eq!(r[8], "");
        assert_eq!(r[9], "");
    }
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "gaussian-ar.json")).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert!(json["constants"]["gaussian"]["beta"].as_f64().unwrap() > 0.0);
    assert_eq!(json["config"]["params"]["alpha"], "0.5");
    assert!(read(dir.path(), "gaussian-ar.svg").starts_with("<svg"));
}

#[test]
fn observation_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.txt");
    std::fs::write(&obs, "0.5 -1.0\n2.0 0.0 1.5\n0.1 0.2\n").unwrap();
    let out = run_in(
        dir.path(),
        &["--scenario", "gaussian-ar", "--n", "2,6", "--grid-size", "301", "--obs-file", obs.to_str().unwrap(), "--format", "json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&read(dir.path(), "gaussian-ar.json")).unwrap();
    let ys: Vec<f64> = json["observations"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(ys, [0.5, -1.0, 2.0, 0.0, 1.5, 0.1, 0.2]);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--scenario", "no-such-model"],
        vec!["--scenario", "discrete", "--n", "9,3"],
        vec!["--scenario", "gaussian-ar", "--param", "alpha=abc"],
        vec!["--scenario", "discrete", "--format", "pdf"],
        vec!["--scenario", "discrete", "--coupling-width", "wide"],
        vec!["--scenario", "gaussian-ar", "--obs-file", "/nonexistent/obs.txt"],
        vec!["--n", "3"],
    ] {
        let out = run_in(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "scenario = discrete\nwidth = 3\n").unwrap();
    let out = run_in(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
