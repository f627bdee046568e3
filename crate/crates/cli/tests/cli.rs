use std::path::PathBuf;
use std::process::{Command, Output};

fn nmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmpc")).args(args).output().unwrap()
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nmpc-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_metrics_round_trip() {
    let dir = scratch_dir("run");
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, "duration = 1.0\n\n[fwd]\nbase_delay = 0.05\n").unwrap();
    let trace = dir.join("trace.csv");

    let out = nmpc(&["run", "--scenario", path(&scenario), "--out", path(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 1 + 101);

    let out = nmpc(&["metrics", "--trace", path(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rss="));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn sweep_writes_summary_and_plot() {
    let dir = scratch_dir("sweep");
    let spec = dir.join("spec.toml");
    std::fs::write(
        &spec,
        "name = \"split\"\nkind = \"delay_split\"\nrtt = 0.1\nsplits = 3\n\n[base]\nduration = 1.0\n",
    )
    .unwrap();
    let out = nmpc(&["sweep", "--spec", path(&spec), "--out-dir", path(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.join("split_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(dir.join("split.gp").exists());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = scratch_dir("bad");
    let missing = dir.join("missing.toml");
    assert_eq!(nmpc(&["run", "--scenario", path(&missing)]).status.code(), Some(2));

    let invalid = dir.join("invalid.toml");
    std::fs::write(&invalid, "duration = -1.0\n").unwrap();
    assert_eq!(nmpc(&["run", "--scenario", path(&invalid)]).status.code(), Some(2));
    assert_eq!(nmpc(&["compare", "--scenario", path(&invalid)]).status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn endpoint_requires_a_role() {
    assert!(!nmpc(&["endpoint"]).status.success());
}
