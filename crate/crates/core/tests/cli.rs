use std::fs;
use std::process::Command;

use flowrl::harness::{run_experiment, write_report, ExperimentConfig, Mode};
use flowrl::simnet::{EpisodeRecord, EPISODE_CSV_HEADER};

fn flowrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowrl"))
}

fn quick() -> ExperimentConfig {
    ExperimentConfig { horizon: 30, orchestration_window: 30, episodes_cap: 15, goal_mu: 0.99, ..ExperimentConfig::default() }
}

#[test]
fn report_csv_round_trips_to_six_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick()).unwrap();
    assert_eq!(report.rows.len(), 15);
    let path = dir.path().join("ql.csv");
    write_report(&report, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(EPISODE_CSV_HEADER));
    let back: Vec<EpisodeRecord> = lines.map(|l| EpisodeRecord::parse_csv_row(l).unwrap()).collect();
    assert_eq!(back.len(), report.rows.len());
    for (a, b) in back.iter().zip(&report.rows) {
        assert_eq!((a.episode, a.overhead, a.hits, a.misses, a.thresholds, a.reward), (b.episode, b.overhead, b.hits, b.misses, b.thresholds, b.reward));
        assert!((a.hit_ratio - b.hit_ratio).abs() <= 5e-7);
        assert!((a.reduction - b.reduction).abs() <= 5e-7);
        assert!((a.epsilon - b.epsilon).abs() <= 5e-7);
    }
    let summary = fs::read_to_string(dir.path().join("ql.csv.summary")).unwrap();
    assert!(summary.contains("goal_met="));
    let cfg_part = summary.split("[summary]").next().unwrap().trim_start_matches("[config]\n");
    assert_eq!(ExperimentConfig::parse(cfg_part).unwrap(), report.config);
}

#[test]
fn empty_trace_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = run_experiment(&ExperimentConfig { mode: Mode::Oracle, ..quick() }).unwrap();
    report.rows.clear();
    let path = dir.path().join("empty.csv");
    write_report(&report, &path).unwrap();
    assert_eq!(fs::read_to_string(path).unwrap(), format!("{EPISODE_CSV_HEADER}\n"));
}

#[test]
fn cli_runs_and_round_trips_a_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "mode=dqn\nhorizon=30\norchestration_window=30\n").unwrap();
    let out = dir.path().join("dqn.csv");
    let policy = dir.path().join("net.txt");
    let first = flowrl()
        .args(["--config", cfg.to_str().unwrap(), "--episodes", "12", "--goal", "0.95", "--seed", "4"])
        .args(["--out", out.to_str().unwrap(), "--save-policy", policy.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(first.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 13);
    assert!(fs::read_to_string(&policy).unwrap().starts_with("layers,4,24,24,24,5"));

    let again = flowrl()
        .args(["--config", cfg.to_str().unwrap(), "--episodes", "5", "--goal", "0.95"])
        .args(["--load-policy", policy.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert!(String::from_utf8_lossy(&again.stdout).contains("episodes_run=5"));
}

#[test]
fn cli_reports_errors_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "mode=ql\ngoal_mu=1.5\n").unwrap();
    let out = flowrl().args(["--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("goal_mu"));

    let missing = flowrl().args(["--config", "/nonexistent/x.cfg"]).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn goal_not_met_is_not_an_error() {
    let out = flowrl()
        .args(["--mode", "ql", "--episodes", "1", "--goal", "0.99"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("goal_met=false"));
}
