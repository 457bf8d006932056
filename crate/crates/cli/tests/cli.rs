//! Runs the `bac` binary end to end on small datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bac_core::dataset_io::{read_dataset, read_report, ToolConfig};
use bac_core::simulator::RigConfig;
use tempfile::TempDir;

fn bac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bac")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bac(args);
    assert!(out.status.success(), "bac {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Short tracks and few iterations so each run takes well under a second.
fn quick_config(dir: &Path, rig: RigConfig) -> PathBuf {
    let mut cfg = ToolConfig {
        rig,
        ..ToolConfig::default()
    };
    cfg.trajectory.duration = 3.0;
    cfg.calibration.optimizer.max_iterations = 20;
    cfg.experiment.closed_loop = 2.0;
    cfg.experiment.open_loop = 1.0;
    cfg.experiment.window_p = 342;
    cfg.experiment.optimizer.max_iterations = 30;
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

/// Simulates and calibrates; returns (dataset, calibration).
fn prepared(dir: &Path, config: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let cal = dir.join("cal.json");
    ok(&["simulate", "--config", s(config), "--seed", "3", "--output", s(&data)]);
    ok(&["calibrate", s(&data), "--config", s(config), "--output", s(&cal)]);
    (data, cal)
}

#[test]
fn default_config_prints_and_parses() {
    let text = ok(&["print-default-config"]);
    assert_eq!(ToolConfig::from_toml(&text).unwrap(), ToolConfig::default());
}

#[test]
fn default_simulation_has_three_imus_at_default_rates() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    ok(&["simulate", "--duration", "2", "--output", s(&out)]);
    let data = read_dataset(&out).unwrap();
    assert_eq!(data.imu_count(), 3);
    assert_eq!(data.rig.imu_rate, 342.0);
    assert_eq!(data.rig.master_rate, 30.0);
    assert_eq!(data.imu_streams[0].len(), 685);
    assert_eq!(data.master.len(), 61);
}

#[test]
fn same_seed_writes_identical_files() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--duration", "1", "--seed", "9", "--output", s(out)]);
    }
    for name in ["manifest.json", "imu_0.csv", "imu_2.csv", "master.csv", "ground_truth.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nothing");
    let out = bac(&["calibrate", s(&missing), "--output", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(bac(&["frobnicate"]).status.code(), Some(1));

    let config = quick_config(dir.path(), RigConfig::default());
    let (data, cal) = prepared(dir.path(), &config);
    let out = bac(&["run", s(&data), "--config", s(&config), "--calibration", s(&cal), "--method", "median", "--output", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("median"));

    // A calibration for three IMUs does not fit a one-IMU dataset.
    let one = dir.path().join("one");
    let single = quick_config(
        dir.path(),
        RigConfig {
            imus: vec![RigConfig::default().imus[0].clone()],
            ..RigConfig::default()
        },
    );
    ok(&["simulate", "--config", s(&single), "--output", s(&one)]);
    let out = bac(&["run", s(&one), "--config", s(&single), "--calibration", s(&cal), "--method", "ave", "--output", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_writes_cost_history() {
    let dir = TempDir::new().unwrap();
    let config = quick_config(dir.path(), RigConfig::default());
    let data = dir.path().join("data");
    ok(&["simulate", "--config", s(&config), "--profile", "calibration", "--output", s(&data)]);
    let csv = dir.path().join("cost.csv");
    ok(&["calibrate", s(&data), "--config", s(&config), "--output", s(&dir.path().join("cal.json")), "--report", s(&csv)]);
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,cost,gradient_norm,step"));
    let costs: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(!costs.is_empty());
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn single_imu_dataset_single_equals_ave() {
    let dir = TempDir::new().unwrap();
    let rig = RigConfig {
        imus: vec![RigConfig::default().imus[0].clone()],
        ..RigConfig::default()
    };
    let config = quick_config(dir.path(), rig);
    let (data, cal) = prepared(dir.path(), &config);
    let out = dir.path().join("r.json");
    ok(&["evaluate", s(&data), "--config", s(&config), "--calibration", s(&cal), "--output", s(&out)]);
    let report = read_report(&out).unwrap();
    let ave = &report.method("ave").unwrap().tracks;
    let single = &report.method("single:0").unwrap().tracks;
    assert_eq!(ave[0].orientation_error, single[0].orientation_error);
    assert_eq!(ave[0].position_error, single[0].position_error);
}

#[test]
fn evaluate_and_report_pipeline() {
    let dir = TempDir::new().unwrap();
    let config = quick_config(dir.path(), RigConfig::default());
    let (data, cal) = prepared(dir.path(), &config);
    let all = dir.path().join("all.json");
    ok(&["evaluate", s(&data), "--config", s(&config), "--calibration", s(&cal), "--output", s(&all)]);
    let report = read_report(&all).unwrap();
    let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names, ["ave", "bac", "bac2", "single:0", "single:1", "single:2"]);

    // Every method starts from the same state.
    let first = report.methods[0].tracks[0].position_error[0];
    for m in &report.methods {
        assert_eq!(m.tracks[0].orientation_error[0], report.methods[0].tracks[0].orientation_error[0]);
        assert_eq!(m.tracks[0].position_error[0], first);
    }
    let bac2 = report.method("bac2").unwrap();
    let sel = bac2.tracks[0].gyro_selection.as_ref().unwrap();
    assert!(sel.indices.iter().all(|i| [1, 2].contains(i)));

    // Per-method fragments merge into the same tables.
    let ave = dir.path().join("ave.json");
    let bac = dir.path().join("bac.json");
    ok(&["run", s(&data), "--config", s(&config), "--calibration", s(&cal), "--method", "ave", "--output", s(&ave)]);
    ok(&["run", s(&data), "--config", s(&config), "--calibration", s(&cal), "--method", "bac", "--output", s(&bac)]);
    let tables = dir.path().join("tables");
    let table = ok(&["report", s(&ave), s(&bac), "--output", s(&tables)]);
    assert!(table.contains("bac"));
    for name in ["ratio_orientation.csv", "ratio_position.csv", "utilization.csv", "track_errors.csv", "summary.json"] {
        assert!(tables.join(name).exists(), "{name}");
    }
    let ratios = std::fs::read_to_string(tables.join("ratio_orientation.csv")).unwrap();
    let ave_rows: Vec<&str> = ratios.lines().filter(|l| l.starts_with("ave,")).collect();
    assert!(!ave_rows.is_empty());
    for row in ave_rows {
        let cols: Vec<f64> = row.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols, [100.0, 100.0], "{row}");
    }
}

#[test]
fn identical_fragments_report_unit_ratio() {
    let dir = TempDir::new().unwrap();
    let config = quick_config(dir.path(), RigConfig::default());
    let (data, cal) = prepared(dir.path(), &config);
    let out = dir.path().join("ave.json");
    ok(&["run", s(&data), "--config", s(&config), "--calibration", s(&cal), "--method", "ave", "--tracks", "1", "--output", s(&out)]);
    let tables = dir.path().join("tables");
    ok(&["report", s(&out), "--output", s(&tables)]);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tables.join("summary.json")).unwrap()).unwrap();
    let m = &summary["methods"][0];
    assert_eq!(m["orientation_ratio_1s"].as_f64(), Some(100.0));
    assert_eq!(m["position_ratio_0_2s"].as_f64(), Some(100.0));
}
