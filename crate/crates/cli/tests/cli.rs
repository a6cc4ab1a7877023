use std::path::Path;
use std::process::{Command, Output};

fn bifwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bifwatch")).args(args).env_remove("BIFWATCH_SEED").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&bifwatch(&["--help"])), 0);
    for sub in ["simulate", "kde", "persistence", "replicate", "detect", "sweep"] {
        let out = bifwatch(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&bifwatch(&["frobnicate"])), 2);
    assert_eq!(code(&bifwatch(&["simulate"])), 2);
    assert_eq!(code(&bifwatch(&["kde", "--input", "/nonexistent/t.csv"])), 2);
    assert_eq!(code(&bifwatch(&["sweep", "--system", "duffing", "--range", "0:1", "--out", "x"])), 2);
    assert_eq!(code(&bifwatch(&["simulate", "--system", "duffing", "--steps", "10", "--burn-in", "20"])), 2);
}

#[test]
fn divergence_exits_three() {
    let out = bifwatch(&["simulate", "--system", "duffing", "--dt", "0.5", "--x0", "50", "--steps", "1000"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (traj, grid, diag, ens) = (d.join("t.csv"), d.join("g.json"), d.join("d.csv"), d.join("e.json"));
    let sim = ["simulate", "--system", "duffing", "--h", "-1", "--q1", "0.45", "--steps", "200000", "--seed", "4"];
    assert_eq!(code(&bifwatch(&[&sim[..], &["--out", p(&traj)]].concat())), 0);
    assert!(std::fs::read_to_string(&traj).unwrap().starts_with("t,x,v\n"));
    assert_eq!(code(&bifwatch(&["kde", "--input", p(&traj), "--nx", "48", "--nv", "48", "--out", p(&grid)])), 0);
    assert_eq!(code(&bifwatch(&["persistence", "--input", p(&grid), "--out", p(&diag)])), 0);
    let diagram = std::fs::read_to_string(&diag).unwrap();
    assert!(diagram.starts_with("dim,birth,death\n"));
    assert!(diagram.lines().skip(1).any(|l| l.starts_with("0,1,")), "global maximum is born at 1");

    for method in ["subsample", "gibbs", "pipp"] {
        let args = ["replicate", "--diagram", p(&diag), "--method", method, "--replicates", "20", "--out", p(&ens)];
        assert_eq!(code(&bifwatch(&args)), 0, "{method}");
        let out = bifwatch(&["detect", "--ensemble", p(&ens)]);
        assert_eq!(code(&out), 0);
        let dist: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let total: f64 = dist["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    let out = bifwatch(&["detect", "--diagram", p(&diag), "--detector", "mahalanobis"]);
    assert_eq!(code(&out), 0);
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verdict["method"], "mahalanobis");
}

#[test]
fn zero_replicates_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("d.csv");
    std::fs::write(&diag, "dim,birth,death\n0,1,0\n0,0.5,0.2\n").unwrap();
    let out = bifwatch(&["replicate", "--diagram", p(&diag), "--method", "subsample", "--replicates", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_diagram_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let diag = dir.path().join("d.csv");
    std::fs::write(&diag, "dim,birth,death\n0,abc,0\n").unwrap();
    assert_eq!(code(&bifwatch(&["replicate", "--diagram", p(&diag), "--method", "subsample"])), 2);
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bifwatch"));
        cmd.args(["simulate", "--system", "rvdp", "--steps", "20000"]).env_remove("BIFWATCH_SEED");
        if let Some(s) = seed {
            cmd.env("BIFWATCH_SEED", s);
        }
        cmd.output().unwrap().stdout
    };
    let explicit = bifwatch(&["simulate", "--system", "rvdp", "--steps", "20000", "--seed", "9"]).stdout;
    assert_eq!(run(Some("9")), explicit);
    assert_eq!(run(None), bifwatch(&["simulate", "--system", "rvdp", "--steps", "20000", "--seed", "0"]).stdout);
    assert_ne!(run(Some("9")), run(None));
}

fn small_sweep(out: &Path, extra: &[&str]) -> Output {
    let args = [
        "sweep", "--system", "duffing", "--range", "-1:1:3", "--steps", "100000", "--replicates", "30", "--nx", "32", "--nv",
        "32", "--seed", "5", "--out", p(out),
    ];
    bifwatch(&[&args[..], extra].concat())
}

#[test]
fn sweep_writes_csv_and_replayable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert_eq!(code(&small_sweep(&first, &[])), 0);
    let csv = std::fs::read_to_string(first.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("param,dim,rank,probability\n"));
    let params: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(params.len(), 3);

    let replay = dir.path().join("b");
    let out = bifwatch(&["sweep", "--config", p(&first.join("manifest.json")), "--out", p(&replay), "--threads", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(first.join("sweep.csv")).unwrap(), std::fs::read(replay.join("sweep.csv")).unwrap());
}

#[test]
fn flags_override_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert_eq!(code(&small_sweep(&first, &["--detector", "mahalanobis"])), 0);
    let second = dir.path().join("b");
    let out = bifwatch(&["sweep", "--config", p(&first.join("manifest.json")), "--values", "0.25", "--out", p(&second)]);
    assert_eq!(code(&out), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(second.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["values"], serde_json::json!([0.25]));
    assert_eq!(manifest["config"]["seed"], 5);
    let csv = std::fs::read_to_string(second.join("sweep.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("0.25,")));
}

#[test]
fn failed_points_are_marked_and_warned() {
    let dir = tempfile::tempdir().unwrap();
    let out = bifwatch(&[
        "sweep", "--system", "duffing", "--values", "0", "--dt", "0.5", "--x0", "50", "--steps", "1000", "--out",
        p(&dir.path().join("s")),
    ]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: param 0"));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv, "param,dim,rank,probability\n0,0,NA,NaN\n");
}

#[test]
fn invalid_sweep_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\"system\": \"nope\"}").unwrap();
    assert_eq!(code(&bifwatch(&["sweep", "--config", p(&cfg), "--out", p(&dir.path().join("o"))])), 2);
    let out = small_sweep(&dir.path().join("o2"), &["--replicates", "0"]);
    assert_eq!(code(&out), 2);
}
