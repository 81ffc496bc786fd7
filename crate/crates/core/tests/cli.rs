use std::path::Path;
use std::process::{Command, Output};

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn counterexample_exit_codes() {
    let out = mfg(&["counterexample", "--horizon", "2", "--lambda-bar", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("contradiction"));
    assert_eq!(mfg(&["counterexample", "--horizon", "2", "--lambda-bar", "0"]).status.code(), Some(0));
    assert_eq!(mfg(&["counterexample", "--horizon", "1", "--lambda-bar", "1"]).status.code(), Some(2));
}

#[test]
fn bad_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "model = \"bounded_demo\"\ntheta = 0.0\n");
    let out = mfg(&["solve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));

    let cfg = write(dir.path(), "typo.toml", "model = \"bounded_demo\"\nthetta = 0.5\n");
    let out = mfg(&["validate-model", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thetta"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(mfg(&["solve", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mfg(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = mfg(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn solve_then_exploitability_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = write(
        dir.path(),
        "run.toml",
        "model = \"bounded_demo\"\nn_steps = 2\nsubsteps = 4\nparticles = 1000\nstate_points = 201\ntol = 0.05\nexploit_threshold = 0.05\n",
    );
    let out = mfg(&["solve", "--config", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "report.toml", "residuals.csv", "policy.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let out = mfg(&[
        "exploitability",
        "--config",
        out_dir.join("config.toml").to_str().unwrap(),
        "--flow",
        out_dir.join("flow").to_str().unwrap(),
        "--policy",
        out_dir.join("policy.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
