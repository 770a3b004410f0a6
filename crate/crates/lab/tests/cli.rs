use std::path::Path;
use std::process::{Command, Output};

use lqr_mpi_lab::io::write_problem;
use lqr_mpi_lab::problems::{mass_problem, MassParams};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqr-mpi"))
        .args(args)
        .output()
        .unwrap()
}

fn mass_file(dir: &Path) -> String {
    let path = dir.join("mass.json");
    write_problem(&path, &mass_problem(&MassParams::default()).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let problem = mass_file(dir.path());
    let k0 = dir.path().join("k0.json");
    std::fs::write(&k0, "[[-0.035, -2.087]]").unwrap();
    let out = dir.path().join("mpi.json");
    let res = run(&[
        "solve",
        &problem,
        "--algorithm",
        "mpi",
        "--k0",
        k0.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report = json(&out);
    assert_eq!(report["status"], "completed");
    let errors = report["result"]["errors"].as_array().unwrap();
    assert!(errors.last().unwrap().as_f64().unwrap() <= 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("mpi.csv")).unwrap();
    assert!(csv.starts_with("instance,algorithm,iteration,rel_error,rho_A,seed\n"));
    assert_eq!(csv.lines().count(), errors.len() + 1);
}

#[test]
fn solve_prints_json_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let problem = mass_file(dir.path());
    let res = run(&["solve", &problem, "--algorithm", "pi"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["status"], "completed");
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n": 2, "m": 1, "A": [[1.0]]}"#).unwrap();
    assert_eq!(
        run(&["solve", bad.to_str().unwrap(), "--algorithm", "pi"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["solve", "/nonexistent.json", "--algorithm", "pi"])
            .status
            .code(),
        Some(2)
    );

    let problem = mass_file(dir.path());
    let unstable = dir.path().join("zero.json");
    std::fs::write(&unstable, "[[0.0, 0.0]]").unwrap();
    let res = run(&[
        "solve",
        &problem,
        "--algorithm",
        "mpi",
        "--k0",
        unstable.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(
        run(&["solve", &problem, "--algorithm", "newton"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn exhausted_budget_exits_with_three_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let problem = mass_file(dir.path());
    let out = dir.path().join("pi.json");
    let res = run(&[
        "solve",
        &problem,
        "--algorithm",
        "pi",
        "--max-iters",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let report = json(&out);
    assert_eq!(report["status"], "non_convergence");
    assert_eq!(report["records"].as_array().unwrap().len(), 3);
}

#[test]
fn mass_experiment_reports_four_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mass.json");
    let res = run(&["experiment", "mass", "--out", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(json(&out)["results"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("mass.csv").exists());
}

#[test]
fn monte_carlo_experiment_runs_small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc.json");
    let res = run(&[
        "experiment",
        "monte-carlo",
        "--count",
        "2",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(json(&out)["instances"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("mc.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}
