//! On-disk formats: dataset directories (CSV plus a JSON manifest written
//! last), calibration and report JSON, the TOML tool configuration, and the
//! plot-ready report tables.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! binary64 value exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationFile, CostConfig};
use crate::error::{Error, Result};
use crate::experiment::{ratio_curves, rig_cost_config, summarize, utilization, ErrorKind, ExperimentConfig, ExperimentReport, ReportSummary, REPORT_SCHEMA};
use crate::imu_model::ImuSample;
use crate::kinematics::Pose;
use crate::lie::{Rotation, Vec3};
use crate::optim::OptimizerConfig;
use crate::simulator::{Dataset, MasterObservation, RigConfig, TrajectorySpec};

pub const DATASET_SCHEMA: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASTER_FILE: &str = "master.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

pub const IMU_HEADER: [&str; 7] = ["t", "wx", "wy", "wz", "ax", "ay", "az"];
pub const MASTER_HEADER: [&str; 13] = ["t", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "px", "py", "pz"];
pub const GROUND_TRUTH_HEADER: [&str; 16] = [
    "t", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "px", "py", "pz", "vx", "vy", "vz",
];

pub fn imu_file(index: usize) -> String {
    format!("imu_{index}.csv")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub seed: u64,
    pub rig: RigConfig,
    pub imu_files: Vec<FileEntry>,
    pub master_file: FileEntry,
    pub ground_truth_file: FileEntry,
    /// Writer name and version. No timestamps, so equal datasets give
    /// byte-identical directories.
    pub created_by: String,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    let mut n = 0;
    for row in rows {
        w.write_record(row.into_iter().map(fmt)).map_err(wrap)?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let corrupt = |line: u64, reason: String| Error::CorruptRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let found = r.headers().map_err(|e| corrupt(1, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(corrupt(1, format!("header {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), header)));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| corrupt(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(corrupt(line, format!("{} fields, expected {}", record.len(), header.len())));
        }
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| corrupt(line, format!("'{f}': {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(corrupt(line, "non-finite value".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn check_rows(path: &Path, entry: &FileEntry, found: usize) -> Result<()> {
    if entry.rows != found {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("manifest declares {} rows, file has {found}", entry.rows),
        });
    }
    Ok(())
}

fn check_times(rows: &[Vec<f64>]) -> Result<()> {
    for (index, w) in rows.windows(2).enumerate() {
        if !(w[1][0] > w[0][0]) {
            return Err(Error::NonMonotonicTimestamps {
                index: index + 1,
                prev: w[0][0],
                next: w[1][0],
            });
        }
    }
    Ok(())
}

fn rotation_row(r: &Rotation) -> [f64; 9] {
    r.to_row_major()
}

fn rotation_at(row: &[f64], at: usize) -> Rotation {
    let mut m = [0.0; 9];
    m.copy_from_slice(&row[at..at + 9]);
    Rotation::from_row_major(&m)
}

fn vec_at(row: &[f64], at: usize) -> Vec3 {
    Vec3::new(row[at], row[at + 1], row[at + 2])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::SchemaMismatch {
            found: found.into(),
            expected: expected.into(),
        });
    }
    Ok(())
}

/// Writes the CSVs, then the manifest.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    if dataset.imu_streams.is_empty() {
        return Err(Error::EmptyImuSet);
    }
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut imu_files = Vec::new();
    for (i, stream) in dataset.imu_streams.iter().enumerate() {
        let name = imu_file(i);
        let rows = stream.iter().map(|s| vec![s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z]);
        let n = write_csv(&dir.join(&name), &IMU_HEADER, rows)?;
        imu_files.push(FileEntry { path: name, rows: n });
    }
    let master_rows = dataset.master.iter().map(|m| {
        let mut row = vec![m.t];
        row.extend(rotation_row(&m.r));
        row.extend(m.p.iter());
        row
    });
    let master_n = write_csv(&dir.join(MASTER_FILE), &MASTER_HEADER, master_rows)?;
    let gt_rows = dataset.ground_truth.iter().map(|p| {
        let mut row = vec![p.t];
        row.extend(rotation_row(&p.r));
        row.extend(p.p.iter());
        row.extend(p.v.iter());
        row
    });
    let gt_n = write_csv(&dir.join(GROUND_TRUTH_FILE), &GROUND_TRUTH_HEADER, gt_rows)?;
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA.into(),
        seed: dataset.seed,
        rig: dataset.rig.clone(),
        imu_files,
        master_file: FileEntry {
            path: MASTER_FILE.into(),
            rows: master_n,
        },
        ground_truth_file: FileEntry {
            path: GROUND_TRUTH_FILE.into(),
            rows: gt_n,
        },
        created_by: concat!("bac-core ", env!("CARGO_PKG_VERSION")).into(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let value: serde_json::Value = read_json(&path)?;
    let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("<missing>");
    check_schema(version, DATASET_SCHEMA)?;
    serde_json::from_value(value).map_err(|e| Error::Format {
        path,
        message: e.to_string(),
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    if manifest.imu_files.is_empty() {
        return Err(Error::EmptyImuSet);
    }
    let load = |entry: &FileEntry, header: &[&str]| -> Result<Vec<Vec<f64>>> {
        let path: PathBuf = dir.join(&entry.path);
        let rows = read_csv(&path, header)?;
        check_rows(&path, entry, rows.len())?;
        check_times(&rows)?;
        Ok(rows)
    };
    let mut imu_streams = Vec::new();
    for (i, entry) in manifest.imu_files.iter().enumerate() {
        let rows = load(entry, &IMU_HEADER)?;
        imu_streams.push(
            rows.iter()
                .map(|r| ImuSample {
                    t: r[0],
                    gyro: vec_at(r, 1),
                    accel: vec_at(r, 4),
                    imu: i,
                })
                .collect(),
        );
    }
    let master = load(&manifest.master_file, &MASTER_HEADER)?
        .iter()
        .map(|r| MasterObservation {
            t: r[0],
            r: rotation_at(r, 1),
            p: vec_at(r, 10),
        })
        .collect();
    let ground_truth = load(&manifest.ground_truth_file, &GROUND_TRUTH_HEADER)?
        .iter()
        .map(|r| Pose::new(rotation_at(r, 1), vec_at(r, 13), vec_at(r, 10), r[0]))
        .collect();
    let dataset = Dataset {
        rig: manifest.rig,
        seed: manifest.seed,
        imu_streams,
        master,
        ground_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_calibration(path: &Path, file: &CalibrationFile) -> Result<()> {
    write_json(path, file)
}

/// Reads and checks a calibration document.
pub fn read_calibration(path: &Path) -> Result<CalibrationFile> {
    let file: CalibrationFile = read_json(path)?;
    file.calibration()?;
    Ok(file)
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let report: ExperimentReport = read_json(path)?;
    check_schema(&report.schema_version, REPORT_SCHEMA)?;
    Ok(report)
}

/// Stage I settings; the weights themselves follow from the rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    /// Shooting segment, IMU samples.
    pub segment_len: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            segment_len: 342,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Everything the command-line tool can be configured with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub rig: RigConfig,
    pub trajectory: TrajectorySpec,
    pub calibration: CalibrationSettings,
    pub experiment: ExperimentConfig,
}

impl ToolConfig {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.trajectory.validate()?;
        self.experiment.validate()?;
        self.calibration.optimizer.validate()?;
        if self.calibration.segment_len == 0 {
            return Err(Error::InvalidConfig("calibration.segment_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Stage I weights for `rig`.
    pub fn cost_config(&self, rig: &RigConfig) -> CostConfig {
        let mut cost = rig_cost_config(rig);
        cost.segment_len = self.calibration.segment_len;
        cost.optimizer = self.calibration.optimizer.clone();
        cost
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ToolConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

/// Files written by [`write_report_tables`].
pub const RATIO_ORIENTATION_FILE: &str = "ratio_orientation.csv";
pub const RATIO_POSITION_FILE: &str = "ratio_position.csv";
pub const UTILIZATION_FILE: &str = "utilization.csv";
pub const TRACK_ERRORS_FILE: &str = "track_errors.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Ratio curves, axis utilization, raw per-track errors and the summary.
pub fn write_report_tables(report: &ExperimentReport, dir: &Path) -> Result<ReportSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (kind, name) in [(ErrorKind::Orientation, RATIO_ORIENTATION_FILE), (ErrorKind::Position, RATIO_POSITION_FILE)] {
        let mut out = String::from("method,horizon_s,mean_ratio_pct,median_ratio_pct\n");
        for (curve, m) in ratio_curves(report, kind)?.iter().zip(&report.methods) {
            for (h, (a, b)) in m.horizons.iter().zip(curve.mean_ratio.iter().zip(&curve.median_ratio)) {
                out += &format!("{},{},{},{}\n", curve.method, fmt(*h), fmt(*a), fmt(*b));
            }
        }
        write_text(&dir.join(name), &out)?;
    }
    let mut out = String::from("method,kind,imu,axis,count,percent\n");
    for r in utilization(report) {
        out += &format!("{},{},{},{},{},{}\n", r.method, r.kind.as_str(), r.imu, r.axis, r.count, fmt(r.percent));
    }
    write_text(&dir.join(UTILIZATION_FILE), &out)?;
    let mut out = String::from("method,track,horizon_s,orientation_error_rad,position_error_m\n");
    for m in &report.methods {
        for t in &m.tracks {
            for (h, (o, p)) in m.horizons.iter().zip(t.orientation_error.iter().zip(&t.position_error)) {
                out += &format!("{},{},{},{},{}\n", m.method, t.track, fmt(*h), fmt(*o), fmt(*p));
            }
        }
    }
    write_text(&dir.join(TRACK_ERRORS_FILE), &out)?;
    let summary = summarize(report)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
