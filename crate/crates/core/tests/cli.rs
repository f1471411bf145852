//! The binary's exit codes, diagnostics and output files.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mh_amcl::geometry::Transform2D;
use mh_amcl::gridmap::{save_map, Cell, OccupancyGrid};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn mh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mh-amcl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SHORT_SCENARIO: &str = r#"{
  "duration": 6.0,
  "waypoints": [{"t": 0.0, "pose": [1.0, 1.0, 0.0]}, {"t": 0.5, "velocity": [0.4, 0.0]}],
  "odom_noise": {"trans_per_trans": 0.02, "rot_per_rot": 0.02},
  "seed": 5
}"#;

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mh(&[]).status.code(), Some(2));
    assert_eq!(mh(&["localize", "--log", "a", "--out", "b"]).status.code(), Some(2));
    let config = data("config.json");
    let bad_pose = mh(&[
        "--config",
        s(&config),
        "localize",
        "--log",
        "a",
        "--out",
        "b",
        "--initial-pose",
        "1 2",
    ]);
    assert_eq!(bad_pose.status.code(), Some(2));
    assert_eq!(mh(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_map_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"map": {"image": "gone.pgm", "metadata": "gone.yaml"}}"#).unwrap();
    let o = mh(&["--config", s(&config), "match", "--log", "x.jsonl", "--time", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gone.pgm"), "{}", stderr(&o));
}

#[test]
fn invalid_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let body = format!(
        r#"{{"map": {{"image": "{}", "metadata": "{}"}}, "filter": {{"reseed": {{"winner_pct": 3}}}}}}"#,
        s(&data("arena.pgm")),
        s(&data("arena.yaml"))
    );
    fs::write(&config, body).unwrap();
    let o = mh(&["--config", s(&config), "match", "--log", "x.jsonl", "--time", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("filter.reseed.winner_pct"), "{}", stderr(&o));
}

#[test]
fn simulate_localize_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let config = data("config.json");
    fs::write(p("scenario.json"), SHORT_SCENARIO).unwrap();

    let o = mh(&[
        "--config",
        s(&config),
        "simulate",
        "--scenario",
        s(&p("scenario.json")),
        "--out",
        s(&p("run.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = mh(&[
        "--config",
        s(&config),
        "localize",
        "--log",
        s(&p("run.jsonl")),
        "--out",
        s(&p("est.jsonl")),
        "--initial-pose",
        "1 1 0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est = fs::read_to_string(p("est.jsonl")).unwrap();
    assert_eq!(est.lines().count(), 60);
    assert!(est.lines().all(|l| l.starts_with("{\"t\":")));
    let timing = fs::read_to_string(p("est.jsonl.timing.csv")).unwrap();
    assert_eq!(timing.lines().next(), Some("t,cpu_s"));

    let o = mh(&[
        "--config",
        s(&config),
        "bench",
        "--est",
        s(&p("est.jsonl")),
        "--gt",
        s(&p("run.jsonl")),
        "--out",
        s(&p("bench")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(p("bench/errors.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("t,pos_err,yaw_err,quality,uncertainty,n_hyp,cpu_s")
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("bench/summary.json")).unwrap()).unwrap();
    assert!(summary["median"].as_f64().unwrap() < 0.15);

    let o = mh(&[
        "--config",
        s(&config),
        "match",
        "--log",
        s(&p("run.jsonl")),
        "--time",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().next(), Some("rank,x,y,yaw,score,level"));
    assert_eq!(table.lines().count(), 17);
}

#[test]
fn bench_without_ground_truth_fails() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.jsonl");
    fs::write(&est, "{\"t\":0.1,\"type\":\"odom\",\"x\":0,\"y\":0,\"yaw\":0}\n").unwrap();
    let o = mh(&[
        "--config",
        s(&data("config.json")),
        "bench",
        "--est",
        s(&est),
        "--gt",
        s(&est),
        "--out",
        s(&dir.path().join("b")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no ground truth"), "{}", stderr(&o));
}

#[test]
fn localize_without_scans_fails() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("odom.jsonl");
    fs::write(
        &log,
        "{\"t\":0.0,\"type\":\"odom\",\"x\":0,\"y\":0,\"yaw\":0}\n{\"t\":1.0,\"type\":\"odom\",\"x\":1,\"y\":0,\"yaw\":0}\n",
    )
    .unwrap();
    let o = mh(&[
        "--config",
        s(&data("config.json")),
        "localize",
        "--log",
        s(&log),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no scan"), "{}", stderr(&o));
}

#[test]
fn malformed_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    fs::write(&log, "{\"t\":0.0,\"type\":\"odom\",\"x\":0,\"y\":0,\"yaw\":0}\n{oops\n").unwrap();
    let o = mh(&[
        "--config",
        s(&data("config.json")),
        "match",
        "--log",
        s(&log),
        "--time",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn match_on_unknown_map_prints_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let grid = OccupancyGrid::filled(40, 40, 0.05, Transform2D::IDENTITY, Cell::Unknown).unwrap();
    save_map(&grid, p("unknown.pgm"), p("unknown.yaml")).unwrap();
    fs::write(
        p("config.json"),
        r#"{"map": {"image": "unknown.pgm", "metadata": "unknown.yaml"}}"#,
    )
    .unwrap();
    fs::write(
        p("scan.jsonl"),
        "{\"t\":0.5,\"type\":\"scan\",\"angle_min\":0,\"angle_inc\":0.1,\"range_max\":10,\"ranges\":[1,2,3]}\n",
    )
    .unwrap();
    let out = p("candidates.csv");
    let o = mh(&[
        "--config",
        s(&p("config.json")),
        "match",
        "--log",
        s(&p("scan.jsonl")),
        "--time",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out).unwrap(), "rank,x,y,yaw,score,level\n");
}

#[test]
fn sample_map_is_the_test_arena() {
    let grid = mh_amcl::gridmap::load_map(data("arena.pgm"), data("arena.yaml")).unwrap();
    assert_eq!(grid, common::arena());
}
