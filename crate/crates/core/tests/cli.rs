use std::path::Path;
use std::process::Command;

use pfch_core::diagnostics::COLUMNS;
use pfch_core::io::series::read_series;
use pfch_core::io::snapshot::read_snapshot;

const SMALL: &str = "\
[grid]
nx = 16
ny = 16

[step]
tau = 1e-3

[initial]
mean = 0.3, 0.3, 0.4
amplitude = 0.05
seed = 7
";

fn pfch(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pfch")).args(args).output().expect("spawn pfch")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = pfch(&["run", "--config", "/nonexistent/pfch.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_reports_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nnx = 2\nbogus = 1\n[initial]\nseed = 1\n");
    let out = pfch(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("ny"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(pfch(&["run", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn short_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = pfch(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--t-end", "0.005"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let series = read_series(&out_dir.join("series.csv")).unwrap();
    assert_eq!(series.len(), 6);
    let header = std::fs::read_to_string(out_dir.join("series.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), COLUMNS.join(","));

    let snap = read_snapshot(&out_dir.join("snapshots/final.pfch")).unwrap();
    assert_eq!((snap.nx, snap.ny), (16, 16));
    for name in ["c_a", "c_b", "c_s", "phi"] {
        assert_eq!(snap.field(name).unwrap().len(), 256);
    }
    assert!(out_dir.join("snapshots/step_000000.pfch").exists());
    let verdict = std::fs::read_to_string(out_dir.join("verdict.csv")).unwrap();
    assert!(verdict.lines().skip(1).all(|l| l.ends_with(",PASS")), "{verdict}");
    assert!(out_dir.join("run.log").exists());
}

#[test]
fn check_replays_and_rejects_corrupt_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    assert_eq!(pfch(&["run", "--config", &cfg, "--out", o, "--t-end", "0.003"]).status.code(), Some(0));

    let series = out_dir.join("series.csv");
    let verdict = dir.path().join("replayed.csv");
    let out = pfch(&["check", series.to_str().unwrap(), "--verdict", verdict.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&verdict).unwrap(),
        std::fs::read_to_string(out_dir.join("verdict.csv")).unwrap()
    );

    // energy that increases between steps must fail the replay
    let text = std::fs::read_to_string(&series).unwrap();
    let total = COLUMNS.iter().position(|c| *c == "total").unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(str::to_owned).collect();
    let v: f64 = cells[total].parse().unwrap();
    cells[total] = format!("{:?}", v + 1.0);
    lines[2] = cells.join(",");
    std::fs::write(&series, lines.join("\n") + "\n").unwrap();
    assert_eq!(pfch(&["check", series.to_str().unwrap()]).status.code(), Some(1));

    std::fs::write(&series, "not,a,series\n1,2,3\n").unwrap();
    assert_eq!(pfch(&["check", series.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn seed_override_changes_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |seed: &str, sub: &str| {
        let o = dir.path().join(sub);
        let args = ["run", "--config", &cfg, "--out", o.to_str().unwrap(), "--t-end", "0", "--seed", seed];
        assert_eq!(pfch(&args).status.code(), Some(0));
        read_snapshot(&o.join("snapshots/step_000000.pfch")).unwrap()
    };
    let a = run("7", "a");
    let b = run("8", "b");
    let c = run("7", "c");
    assert_ne!(a.field("c_a"), b.field("c_a"));
    assert_eq!(a.field("c_a"), c.field("c_a"));
}

#[test]
fn grid_cap_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_pfch"))
        .args(["run", "--config", &cfg, "--out", o.to_str().unwrap(), "--t-end", "0"])
        .env("PFCH_MAX_CELLS", "100")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn derivative_test_passes_on_the_default_grid() {
    let out = pfch(&["derivative-test", "--cases", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with("PASS")).count(), 3);
}

#[test]
fn snapshot_cadence_follows_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dir.path().join("out");
    let args = ["run", "--config", &cfg, "--out", o.to_str().unwrap(), "--t-end", "0.004", "--snapshot-every", "2"];
    assert_eq!(pfch(&args).status.code(), Some(0));
    let mut names: Vec<String> = std::fs::read_dir(o.join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["final.pfch", "step_000000.pfch", "step_000002.pfch", "step_000004.pfch"]);
}
