use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use constrained_hj::io::read_snapshot;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn chj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chj")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let path = dir.join(name);
    fs::write(&path, body.to_string()).unwrap();
    path.display().to_string()
}

fn canonical_inline() -> serde_json::Value {
    serde_json::json!({ "a": 1.0, "B": [[1.0]], "theta": [0.5], "c": 1.0 })
}

fn init_inline() -> serde_json::Value {
    serde_json::json!({ "u0": { "kind": "quadratic", "m0": [0.0], "A0": [[1.0]] } })
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o").display().to_string();
    assert_eq!(chj(&["solve-oracle", "--config", "/nonexistent.json", "--out", &out]).status.code(), Some(1));
    let unknown = write_config(
        tmp.path(),
        "bad.json",
        serde_json::json!({ "model": canonical_inline(), "init": init_inline(), "T": 1.0, "dt": 0.01, "typo": 1 }),
    );
    assert_eq!(chj(&["solve-oracle", "--config", &unknown, "--out", &out]).status.code(), Some(1));
    let short = write_config(
        tmp.path(),
        "short.json",
        serde_json::json!({ "model": canonical_inline(), "init": init_inline(), "eps": [0.1, 0.05, 0.025] }),
    );
    assert_eq!(chj(&["sweep", "--config", &short, "--out", &out]).status.code(), Some(1));
    assert_eq!(chj(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "limit.json",
        serde_json::json!({
            "model": canonical_inline(), "init": init_inline(),
            "grid": { "lo": [-4.0], "hi": [5.0], "n": [901] }, "dt": 0.01, "T": 0.1
        }),
    );
    let out = tmp.path().join("o").display().to_string();
    let result = chj(&["solve-limit", "--config", &cfg, "--out", &out]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("CFL"));
}

#[test]
fn solve_limit_writes_readable_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "limit.json",
        serde_json::json!({
            "model": canonical_inline(), "init": init_inline(),
            "grid": { "lo": [-4.0], "hi": [5.0], "n": [451] }, "dt": 4e-4, "T": 0.5,
            "sample_every": 50, "snapshot_times": [0.5]
        }),
    );
    let out = tmp.path().join("o");
    let result = chj(&["solve-limit", "--config", &cfg, "--out", &out.display().to_string(), "--emit-plot-data"]);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));
    let field = read_snapshot(&out.join("snapshots/u_t0.5.bin")).unwrap();
    assert_eq!(field.spec.n, vec![451]);
    assert!(field.max_value().abs() < 1e-3);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 26);
    let plot = fs::read_to_string(out.join("plot/u_t0.5.dat")).unwrap();
    assert_eq!(plot.lines().filter(|l| !l.starts_with('#')).count(), 451);
    assert!(out.join("plot/resource.dat").exists());
}

#[test]
fn parabolic_eps_flag_overrides_config_and_env_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("parabolic.json").display().to_string();
    let result = Command::new(env!("CARGO_BIN_EXE_chj"))
        .args(["solve-parabolic", "--config", &cfg, "--eps", "0.1"])
        .env("CHJ_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stderr));
    let dir = tmp.path().join("solve-parabolic");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["eps"], 0.1);
    assert!(dir.join("samples.csv").exists());
    assert!(dir.join("snapshots/u_eps_t1.bin").exists());
    assert!(dir.join("snapshots/n_eps_t1.json").exists());
}

#[test]
fn fixed_point_and_lipschitz_probe_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fp").display().to_string();
    let cfg = configs().join("fixed-point.json").display().to_string();
    assert_eq!(chj(&["fixed-point", "--config", &cfg, "--delta", "0.05", "--out", &out]).status.code(), Some(0));
    let picard: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("fp/picard.json")).unwrap()).unwrap();
    assert_eq!(picard[0]["converged"], true);
    let out = tmp.path().join("lp").display().to_string();
    let cfg = configs().join("lipschitz.json").display().to_string();
    assert_eq!(chj(&["lipschitz-probe", "--config", &cfg, "--out", &out]).status.code(), Some(0));
    assert!(tmp.path().join("lp/transport.json").exists());
}

#[test]
fn oracle_command_reports_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("or");
    let cfg = configs().join("oracle.json").display().to_string();
    assert_eq!(chj(&["solve-oracle", "--config", &cfg, "--out", &out.display().to_string()]).status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["hj_residual"].as_f64().unwrap() <= 1e-6);
    assert!((summary["resource"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
}
