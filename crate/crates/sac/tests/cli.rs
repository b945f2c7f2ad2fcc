//! End-to-end smoke tests for the `sac` binary and its exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

fn sac() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sac"))
}

fn write_config(dir: &Path, name: &str, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            r#"
n = 7
f_bound = 3
rounds = 6
seed = {seed}
protocol = "sac"

[roles]
reliable = 4
faulty = 2
adversarial = 1

[topology]
kind = "merg"

[agents]
adversary_mode = "replay_falsified"

[agents.reliable]
answer_accuracy = 0.84
judge_accuracy = 0.9

[agents.faulty]
answer_accuracy = 0.25
judge_accuracy = 0.6

[tasks]
source = "synthetic"
count = 5
alphabet_size = 4
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_writes_traces_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", 7);
    let out_dir = dir.path().join("out");
    let output = sac()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{:?}", output);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("method,topology,seed,"));
    assert!(stdout.contains("sac,merg,7,"));
    assert!(out_dir.join("traces.jsonl").exists());
    assert!(out_dir.join("report.csv").exists());

    // report subcommand reproduces the emitted row from the archive
    let report = sac()
        .args(["report", "--traces"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(report.status.success());
    let recomputed = String::from_utf8(report.stdout).unwrap();
    let row = stdout.lines().nth(1).unwrap();
    assert!(recomputed.contains(row), "recomputed:\n{}", recomputed);
}

#[test]
fn seed_override_changes_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", 7);
    let base = sac().args(["run", "--config"]).arg(&config).output().unwrap();
    let overridden = sac()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--seed", "8"])
        .output()
        .unwrap();
    assert!(base.status.success() && overridden.status.success());
    assert_ne!(base.stdout, overridden.stdout);
    assert!(String::from_utf8(overridden.stdout).unwrap().contains("sac,merg,8,"));
}

#[test]
fn sweep_runs_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "a.toml", 1);
    write_config(dir.path(), "b.toml", 2);
    let output = sac()
        .args(["sweep", "--config-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3); // header + 2 rows
}

#[test]
fn config_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "definitely not a config").unwrap();
    let output = sac().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn robustness_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "exp.toml", 7);
    // shrink the population: K4-sized MERG cannot be 4-robust
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("n = 7", "n = 4")
        .replace("reliable = 4", "reliable = 2")
        .replace("faulty = 2", "faulty = 1");
    fs::write(&config, text).unwrap();
    let output = sac().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{:?}", output);
}

#[test]
fn graph_build_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("merg7.txt");
    let build = sac()
        .args(["graph", "build", "--topology", "merg", "--n", "7", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(build.status.success(), "{:?}", build);

    let ok = sac()
        .args(["graph", "check", "--file"])
        .arg(&path)
        .args(["--r", "4"])
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8(ok.stdout).unwrap().contains("4-robust"));

    let too_high = sac()
        .args(["graph", "check", "--file"])
        .arg(&path)
        .args(["--r", "5"])
        .output()
        .unwrap();
    assert_eq!(too_high.status.code(), Some(2));
    assert!(String::from_utf8(too_high.stdout).unwrap().contains("NOT 5-robust"));
}
