//! Track protocol: Stage II on the closed-loop part of each track, BAC axis
//! selection from the Stage II errors, open-loop dead reckoning per method,
//! and errors on a fixed horizon grid against the withheld ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{segments, stage1_calibrate, stage2_estimate, CalibrationData, CostConfig, Estimate, ImuCalibration};
use crate::error::{Error, Result};
use crate::fusion::{
    accel_axis_errors, bac_gyro, gyro_axis_errors, run_open_loop, AxisErrorWindow, AxisSelection, FusionMode, SensorKind, SensorModel,
    CONDITION_CEILING,
};
use crate::imu_model::ImuSample;
use crate::kinematics::{angular_acceleration, inertial_acceleration_master, ImuExtrinsics, Pose, Trajectory};
use crate::lie::{exp_so3, geodesic_distance, rotation_mean, AxisAngle, Rotation, Vec3};
use crate::optim::OptimizerConfig;
use crate::simulator::{segment_tracks, Dataset, MasterObservation, RigConfig, TrackSegment};
use crate::spline::{CubicSpline, RotationSpline};

pub const REPORT_SCHEMA: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ave,
    Bac,
    Bac2,
    Single(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ave => write!(f, "ave"),
            Method::Bac => write!(f, "bac"),
            Method::Bac2 => write!(f, "bac2"),
            Method::Single(i) => write!(f, "single:{i}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ave" => Ok(Method::Ave),
            "bac" => Ok(Method::Bac),
            "bac2" => Ok(Method::Bac2),
            _ => s
                .strip_prefix("single:")
                .and_then(|i| i.parse().ok())
                .map(Method::Single)
                .ok_or_else(|| Error::UnknownMethod(s.to_string())),
        }
    }
}

impl Method {
    /// AVE, BAC, BAC-2 and every single IMU.
    pub fn all(imus: usize) -> Vec<Method> {
        let mut m = vec![Method::Ave, Method::Bac];
        if imus >= 3 {
            m.push(Method::Bac2);
        }
        m.extend((0..imus).map(Method::Single));
        m
    }
}

/// Instants at which selection errors are recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSampling {
    /// IMU samples nearest each Master observation.
    MasterInstants,
    EverySample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// s
    pub closed_loop: f64,
    /// s
    pub open_loop: f64,
    /// Selection window, IMU samples.
    pub window_p: usize,
    pub error_sampling: ErrorSampling,
    /// Candidate IMUs for BAC-2.
    pub bac2_imus: Vec<usize>,
    pub condition_ceiling: f64,
    /// Re-run selection every this many closed-loop samples, for axis
    /// utilization statistics. The open loop always uses the final one.
    pub reselect_every: Option<usize>,
    /// Horizon spacing, s. Defaults to the Master period.
    pub horizon_step: Option<f64>,
    /// Stage II shooting segment, IMU samples.
    pub segment_len: usize,
    pub optimizer: OptimizerConfig,
    /// Evaluate only the first this many tracks.
    pub max_tracks: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            closed_loop: 10.0,
            open_loop: 5.0,
            window_p: 1024,
            error_sampling: ErrorSampling::MasterInstants,
            bac2_imus: vec![1, 2],
            condition_ceiling: CONDITION_CEILING,
            reselect_every: None,
            horizon_step: None,
            segment_len: 342,
            optimizer: OptimizerConfig {
                max_iterations: 400,
                ..OptimizerConfig::default()
            },
            max_tracks: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.closed_loop > 0.0) || !(self.open_loop > 0.0) {
            return Err(Error::InvalidConfig("closed and open loop lengths must be positive".into()));
        }
        if self.window_p == 0 || self.segment_len == 0 {
            return Err(Error::InvalidConfig("window_p and segment_len must be >= 1".into()));
        }
        if let Some(h) = self.horizon_step {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig("horizon_step must be positive".into()));
            }
        }
        if self.reselect_every == Some(0) {
            return Err(Error::InvalidConfig("reselect_every must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    /// Stage II weights for `dataset`'s rig.
    pub fn cost_config(&self, dataset: &Dataset) -> CostConfig {
        let mut cost = rig_cost_config(&dataset.rig);
        cost.segment_len = self.segment_len;
        cost.optimizer = self.optimizer.clone();
        cost
    }

    pub fn horizons(&self, master_rate: f64) -> Vec<f64> {
        let step = self.horizon_step.unwrap_or(1.0 / master_rate);
        let n = (self.open_loop / step + 1e-9).floor() as usize;
        (0..n).map(|j| j as f64 * step).collect()
    }
}

/// Cost weights from the first IMU's noise densities and the Master noise.
pub fn rig_cost_config(rig: &RigConfig) -> CostConfig {
    let mut cost = CostConfig::from_noise(&rig.imus[0].intrinsics, rig.dt()).with_master_noise(
        rig.master_orientation_sigma,
        rig.master_position_sigma,
        rig.master_rate,
    );
    cost.gravity = rig.gravity;
    cost
}

/// The rig's configured (true) intrinsics and extrinsic rotations, for
/// runs that bypass Stage I.
pub fn rig_calibration(rig: &RigConfig) -> Vec<ImuCalibration> {
    rig.imus
        .iter()
        .map(|i| ImuCalibration {
            c_g: i.intrinsics.c_g,
            c_a: i.intrinsics.c_a,
            r_mi: i.extrinsics.r_mi,
            final_bias: Default::default(),
        })
        .collect()
}

/// Stage I over a whole dataset against its interpolated Master track.
/// Lever arms come from the rig configuration.
pub fn calibrate_dataset(dataset: &Dataset, cost: &CostConfig) -> Result<Estimate> {
    dataset.validate()?;
    let times: Vec<f64> = dataset.ground_truth.iter().map(|p| p.t).collect();
    let reference = master_reference(&dataset.master, &times)?;
    let lever_arms = dataset.rig.imus.iter().map(|i| i.extrinsics.p_im).collect();
    let data = CalibrationData::new(reference, dataset.imu_streams.clone(), lever_arms)?;
    stage1_calibrate(&data, cost)
}

/// Master pose and velocity at `times`, interpolated from the observations
/// inside `[times[0], last]` (cubic spline for position, tangent-space
/// cubic for orientation).
pub fn master_reference(master: &[MasterObservation], times: &[f64]) -> Result<Vec<Pose>> {
    let (Some(&t0), Some(&t1)) = (times.first(), times.last()) else {
        return Ok(Vec::new());
    };
    let eps = 1e-9;
    let obs: Vec<&MasterObservation> = master.iter().filter(|m| m.t >= t0 - eps && m.t <= t1 + eps).collect();
    if obs.len() < 2 {
        return Err(Error::Validation(format!("fewer than two Master observations in [{t0}, {t1}]")));
    }
    let ts: Vec<f64> = obs.iter().map(|m| m.t).collect();
    let pos = CubicSpline::natural(ts.clone(), obs.iter().map(|m| m.p).collect())?;
    let rot = RotationSpline::new(ts, obs.iter().map(|m| m.r).collect())?;
    Ok(times
        .iter()
        .map(|&t| {
            let x = pos.eval(t);
            Pose::new(rot.eval(t), x.d1, x.value, t)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRecord {
    pub kind: SensorKind,
    /// Closed-loop sample at which the selection was made.
    pub sample: usize,
    pub indices: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub track: usize,
    /// rad, one per horizon.
    pub orientation_error: Vec<f64>,
    /// m, one per horizon.
    pub position_error: Vec<f64>,
    pub gyro_selection: Option<AxisSelection>,
    pub accel_selection: Option<AxisSelection>,
    pub utilization: Vec<UtilizationRecord>,
    /// BAC could not compose and fell back to AVE over its candidates.
    pub fallback: bool,
    pub stage2_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub window_p: usize,
    /// s
    pub horizons: Vec<f64>,
    pub tracks: Vec<TrackResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: String,
    pub dataset_seed: u64,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn merge(fragments: Vec<ExperimentReport>) -> Result<Self> {
        let mut it = fragments.into_iter();
        let mut out = it.next().ok_or_else(|| Error::Validation("no report fragments".into()))?;
        for f in it {
            if f.schema_version != out.schema_version {
                return Err(Error::SchemaMismatch {
                    found: f.schema_version,
                    expected: out.schema_version,
                });
            }
            out.methods.extend(f.methods);
        }
        Ok(out)
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Stage II outcome and everything derived from it for one track.
pub struct TrackContext<'a> {
    pub dataset: &'a Dataset,
    pub track: TrackSegment,
    pub calibration: &'a [ImuCalibration],
    pub extrinsics: Vec<ImuExtrinsics>,
    pub reference: Vec<Pose>,
    pub estimate: Estimate,
    /// Closed-loop sample indices (track-local) where errors are recorded.
    pub instants: Vec<usize>,
    /// `[instant][imu]`
    pub gyro_errors: Vec<Vec<Vec3>>,
    cfg: &'a ExperimentConfig,
}

fn calibrated_extrinsics(dataset: &Dataset, calibration: &[ImuCalibration]) -> Vec<ImuExtrinsics> {
    calibration
        .iter()
        .zip(&dataset.rig.imus)
        .map(|(c, imu)| ImuExtrinsics::new(c.r_mi, imu.extrinsics.p_im))
        .collect()
}

impl<'a> TrackContext<'a> {
    pub fn new(dataset: &'a Dataset, calibration: &'a [ImuCalibration], track: TrackSegment, cfg: &'a ExperimentConfig) -> Result<Self> {
        if calibration.len() != dataset.imu_count() {
            return Err(Error::IncompatibleCalibration {
                calibration: calibration.len(),
                dataset: dataset.imu_count(),
            });
        }
        let range = track.start_sample..=track.split_sample;
        let streams: Vec<Vec<ImuSample>> = dataset.imu_streams.iter().map(|s| s[range.clone()].to_vec()).collect();
        let times: Vec<f64> = streams[0].iter().map(|s| s.t).collect();
        let reference = master_reference(&dataset.master, &times)?;
        let extrinsics = calibrated_extrinsics(dataset, calibration);
        let lever_arms = extrinsics.iter().map(|e| e.p_im).collect();
        let data = CalibrationData::new(reference.clone(), streams, lever_arms)?;
        let estimate = stage2_estimate(&data, calibration, &cfg.cost_config(dataset))?;

        let instants: Vec<usize> = match cfg.error_sampling {
            ErrorSampling::EverySample => (0..times.len()).collect(),
            ErrorSampling::MasterInstants => {
                let rate = dataset.rig.imu_rate;
                let mut v: Vec<usize> = dataset
                    .master
                    .iter()
                    .filter(|m| m.t >= track.start - 1e-9 && m.t <= track.split + 1e-9)
                    .map(|m| (((m.t - track.start) * rate).round() as usize).min(times.len() - 1))
                    .collect();
                v.dedup();
                v
            }
        };
        let gyro_errors = instants
            .iter()
            .map(|&k| {
                let est: Vec<Rotation> = estimate.states.iter().map(|s| s[k].r).collect();
                gyro_axis_errors(&reference[k].r, &est, &extrinsics)
            })
            .collect();
        Ok(TrackContext {
            dataset,
            track,
            calibration,
            extrinsics,
            reference,
            estimate,
            instants,
            gyro_errors,
            cfg,
        })
    }

    fn closed_len(&self) -> usize {
        self.reference.len()
    }

    fn window(&self, errors: &[Vec<Vec3>], until: usize) -> Result<AxisErrorWindow> {
        let mut w = AxisErrorWindow::new(self.dataset.imu_count(), self.cfg.window_p);
        for (n, &k) in self.instants.iter().enumerate() {
            if k > until {
                break;
            }
            for (i, e) in errors[n].iter().enumerate() {
                w.push(i, k, *e)?;
            }
        }
        Ok(w)
    }

    fn models(&self, bias_at: usize) -> Vec<SensorModel> {
        self.calibration
            .iter()
            .zip(&self.extrinsics)
            .zip(&self.estimate.biases)
            .map(|((c, ext), b)| SensorModel {
                c_g: c.c_g,
                c_a: c.c_a,
                extrinsics: *ext,
                bias: b[bias_at],
            })
            .collect()
    }

    /// Master-frame positions integrated per IMU with the BAC-gyro
    /// orientation, then the accelerometer errors at every instant.
    fn accel_errors(&self, gyro: &AxisSelection) -> Result<Vec<Vec<Vec3>>> {
        let n = self.closed_len();
        let imus = self.dataset.imu_count();
        let g = self.dataset.rig.gravity;
        let ceiling = self.cfg.condition_ceiling;
        let rng = self.track.start_sample..=self.track.split_sample;
        let streams: Vec<&[ImuSample]> = self.dataset.imu_streams.iter().map(|s| &s[rng.clone()]).collect();
        let t = |k: usize| streams[0][k].t;

        let mut omega = Vec::with_capacity(n);
        for k in 0..n {
            let omegas: Vec<Vec3> = (0..imus)
                .map(|i| self.calibration[i].c_g * streams[i][k].gyro - self.estimate.biases[i][k].gyro)
                .collect();
            omega.push(bac_gyro(gyro, &omegas, ceiling)?);
        }
        let mut omega_dot = Vec::with_capacity(n);
        for k in 0..n {
            let prev = (k > 0).then(|| omega[k - 1]);
            let dt = if k > 0 { t(k) - t(k - 1) } else { 1.0 };
            omega_dot.push(angular_acceleration(&omega[k], prev.as_ref(), dt)?);
        }

        let segs = segments(n, self.cfg.segment_len);
        let vars = &self.estimate.variables;
        let mut r_bac = vec![Rotation::identity(); n];
        let mut positions = vec![vec![Vec3::zeros(); imus]; n];
        for (j, &(s, e)) in segs.iter().enumerate() {
            let anchors: Vec<Rotation> = vars.imus.iter().map(|v| v.anchors[j].r).collect();
            let mut r = rotation_mean(&anchors)?;
            let mut pv: Vec<(Vec3, Vec3)> = vars.imus.iter().map(|v| (v.anchors[j].p, v.anchors[j].v)).collect();
            for k in s..=e {
                r_bac[k] = r;
                for i in 0..imus {
                    positions[k][i] = pv[i].0;
                }
                if k == e {
                    break;
                }
                let dt = t(k + 1) - t(k);
                for (i, (p, v)) in pv.iter_mut().enumerate() {
                    let c = &self.calibration[i];
                    let ext = &self.extrinsics[i];
                    let q = c.c_a * streams[i][k].accel - self.estimate.biases[i][k].accel
                        + inertial_acceleration_master(&omega[k], &omega_dot[k], ext);
                    let f = r * (ext.r_mi * q) + g;
                    *p += *v * dt + 0.5 * f * dt * dt;
                    *v += f * dt;
                }
                r = r * exp_so3(&AxisAngle(omega[k] * dt));
            }
        }
        Ok(self
            .instants
            .iter()
            .map(|&k| accel_axis_errors(&self.reference[k], &r_bac[k], &positions[k], &self.extrinsics))
            .collect())
    }

    /// Gyro then accel selection over `candidates` from the windows ending
    /// at the split, plus re-selections for utilization statistics.
    pub fn select(&self, candidates: &[usize]) -> Result<(AxisSelection, AxisSelection, Vec<UtilizationRecord>)> {
        let last = self.closed_len() - 1;
        let ceiling = self.cfg.condition_ceiling;
        let gyro = AxisSelection::from_window(SensorKind::Gyro, &self.window(&self.gyro_errors, last)?, candidates, &self.extrinsics, ceiling)?;
        let accel_errors = self.accel_errors(&gyro)?;
        let accel = AxisSelection::from_window(SensorKind::Accel, &self.window(&accel_errors, last)?, candidates, &self.extrinsics, ceiling)?;

        let mut records = Vec::new();
        let mut checkpoints = Vec::new();
        if let Some(m) = self.cfg.reselect_every {
            let first = self.instants.first().copied().unwrap_or(0);
            checkpoints.extend((1..).map(|j| j * m).take_while(|&k| k < last).filter(|&k| k >= first));
        }
        checkpoints.push(last);
        for k in checkpoints {
            let gw = self.window(&self.gyro_errors, k)?;
            let aw = self.window(&accel_errors, k)?;
            for (kind, w) in [(SensorKind::Gyro, gw), (SensorKind::Accel, aw)] {
                records.push(UtilizationRecord {
                    kind,
                    sample: k,
                    indices: crate::fusion::select_best_axes(&w, candidates)?,
                });
            }
        }
        Ok((gyro, accel, records))
    }

    /// Shared open-loop start: mean over IMUs of the Stage II states at the
    /// split.
    pub fn initial_state(&self) -> Result<Pose> {
        let last = self.closed_len() - 1;
        let finals: Vec<&Pose> = self.estimate.states.iter().map(|s| &s[last]).collect();
        let n = finals.len() as f64;
        let r = rotation_mean(&finals.iter().map(|p| p.r).collect::<Vec<_>>())?;
        let v = finals.iter().fold(Vec3::zeros(), |a, p| a + p.v) / n;
        let p = finals.iter().fold(Vec3::zeros(), |a, p| a + p.p) / n;
        Ok(Pose::new(r, v, p, finals[0].t))
    }

    /// Open-loop run and horizon errors for `method`.
    pub fn evaluate(&self, method: Method) -> Result<TrackResult> {
        let imus = self.dataset.imu_count();
        let check = |i: usize| {
            if i < imus {
                Ok(i)
            } else {
                Err(Error::InvalidConfig(format!("method {method} refers to IMU {i} of {imus}")))
            }
        };
        let ceiling = self.cfg.condition_ceiling;
        let mut result = TrackResult {
            track: self.track.index,
            orientation_error: Vec::new(),
            position_error: Vec::new(),
            gyro_selection: None,
            accel_selection: None,
            utilization: Vec::new(),
            fallback: false,
            stage2_cost: self.estimate.report.final_cost,
        };
        let mode = match method {
            Method::Ave => FusionMode::Ave((0..imus).collect()),
            Method::Single(i) => FusionMode::Ave(vec![check(i)?]),
            Method::Bac | Method::Bac2 => {
                let candidates: Vec<usize> = if method == Method::Bac {
                    (0..imus).collect()
                } else {
                    self.cfg.bac2_imus.iter().map(|&i| check(i)).collect::<Result<_>>()?
                };
                match self.select(&candidates) {
                    Ok((gyro, accel, util)) => {
                        result.gyro_selection = Some(gyro.clone());
                        result.accel_selection = Some(accel.clone());
                        result.utilization = util;
                        FusionMode::Bac { gyro, accel }
                    }
                    Err(Error::NearCoplanar { condition, .. }) => {
                        log::warn!("track {}: {method} axes near-coplanar (condition {condition:.3e}), using AVE", self.track.index);
                        result.fallback = true;
                        FusionMode::Ave(candidates)
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let split = self.track.split_sample;
        let open = split..=self.track.end_sample;
        let streams: Vec<&[ImuSample]> = self.dataset.imu_streams.iter().map(|s| &s[open.clone()]).collect();
        let prior: Option<Vec<ImuSample>> = (split > self.track.start_sample).then(|| self.dataset.imu_streams.iter().map(|s| s[split - 1]).collect());
        let models = self.models(self.closed_len() - 1);
        let traj = run_open_loop(
            &self.initial_state()?,
            &streams,
            prior.as_deref(),
            &models,
            &mode,
            &self.dataset.rig.gravity,
            ceiling,
        )?;
        let truth = Trajectory::new(self.dataset.ground_truth[open].to_vec())?;
        for h in self.cfg.horizons(self.dataset.rig.master_rate) {
            let t = self.track.split + h;
            let (e, g) = (traj.at(t), truth.at(t));
            result.orientation_error.push(geodesic_distance(&g.r, &e.r));
            result.position_error.push((g.p - e.p).norm());
        }
        Ok(result)
    }
}

/// Runs every method on every track; Stage II is shared across methods.
pub fn run_experiment(dataset: &Dataset, calibration: &[ImuCalibration], methods: &[Method], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    dataset.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let mut tracks = segment_tracks(dataset, cfg.closed_loop, cfg.open_loop)?;
    if let Some(n) = cfg.max_tracks {
        tracks.truncate(n);
    }
    let horizons = cfg.horizons(dataset.rig.master_rate);
    let mut reports: Vec<MethodReport> = methods
        .iter()
        .map(|m| MethodReport {
            method: m.to_string(),
            window_p: cfg.window_p,
            horizons: horizons.clone(),
            tracks: Vec::new(),
        })
        .collect();
    for track in tracks {
        let ctx = TrackContext::new(dataset, calibration, track, cfg)?;
        log::info!("track {}: stage II cost {:.4e}", track.index, ctx.estimate.report.final_cost);
        for (m, r) in methods.iter().zip(&mut reports) {
            r.tracks.push(ctx.evaluate(*m)?);
        }
    }
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA.into(),
        dataset_seed: dataset.seed,
        methods: reports,
    })
}

/// Ratio of one method's errors to AVE's, percent, per horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub method: String,
    /// Mean error over tracks divided by AVE's mean error.
    pub mean_ratio: Vec<f64>,
    /// Median over tracks of the per-track ratio.
    pub median_ratio: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Orientation,
    Position,
}

fn errors_of(t: &TrackResult, kind: ErrorKind) -> &[f64] {
    match kind {
        ErrorKind::Orientation => &t.orientation_error,
        ErrorKind::Position => &t.position_error,
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ratio curves of every method against the first AVE entry.
pub fn ratio_curves(report: &ExperimentReport, kind: ErrorKind) -> Result<Vec<RatioCurve>> {
    let base = report
        .method("ave")
        .ok_or_else(|| Error::Validation("report has no AVE baseline".into()))?;
    let mut out = Vec::new();
    for m in &report.methods {
        if m.tracks.len() != base.tracks.len() || m.horizons.len() != base.horizons.len() {
            return Err(Error::Validation(format!("{} was not run on the same tracks and horizons as ave", m.method)));
        }
        let mut mean_ratio = Vec::with_capacity(m.horizons.len());
        let mut median_ratio = Vec::with_capacity(m.horizons.len());
        for h in 0..m.horizons.len() {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut per_track = Vec::new();
            for (a, b) in m.tracks.iter().zip(&base.tracks) {
                let (x, y) = (errors_of(a, kind)[h], errors_of(b, kind)[h]);
                num += x;
                den += y;
                per_track.push(if y > 0.0 { x / y } else { 1.0 });
            }
            mean_ratio.push(if den > 0.0 { 100.0 * (num / den) } else { 100.0 });
            median_ratio.push(100.0 * median(&mut per_track));
        }
        out.push(RatioCurve {
            method: m.method.clone(),
            mean_ratio,
            median_ratio,
        });
    }
    Ok(out)
}

/// First horizon after which the ratio is at or above 100% having been
/// below it.
pub fn crossover(horizons: &[f64], ratio: &[f64]) -> Option<f64> {
    let mut below = false;
    for (h, r) in horizons.iter().zip(ratio) {
        if *r < 100.0 {
            below = true;
        } else if below && *r >= 100.0 {
            return Some(*h);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub method: String,
    pub kind: SensorKind,
    pub imu: usize,
    pub axis: usize,
    pub count: usize,
    /// Share of selections of this axis and kind that went to `imu`.
    pub percent: f64,
}

/// How often each IMU supplied each axis, per method and sensor kind.
pub fn utilization(report: &ExperimentReport) -> Vec<UtilizationRow> {
    let imus = report
        .methods
        .iter()
        .flat_map(|m| &m.tracks)
        .flat_map(|t| &t.utilization)
        .flat_map(|u| u.indices)
        .max()
        .map_or(0, |m| m + 1);
    let mut rows = Vec::new();
    for m in &report.methods {
        for kind in [SensorKind::Gyro, SensorKind::Accel] {
            let mut counts = vec![[0usize; 3]; imus];
            for u in m.tracks.iter().flat_map(|t| &t.utilization).filter(|u| u.kind == kind) {
                for (axis, &i) in u.indices.iter().enumerate() {
                    counts[i][axis] += 1;
                }
            }
            let totals: Vec<usize> = (0..3).map(|a| counts.iter().map(|c| c[a]).sum()).collect();
            if totals.iter().all(|&t| t == 0) {
                continue;
            }
            for (imu, c) in counts.iter().enumerate() {
                for axis in 0..3 {
                    rows.push(UtilizationRow {
                        method: m.method.clone(),
                        kind,
                        imu,
                        axis,
                        count: c[axis],
                        percent: if totals[axis] > 0 { 100.0 * c[axis] as f64 / totals[axis] as f64 } else { 0.0 },
                    });
                }
            }
        }
    }
    rows
}

/// Horizon index nearest `h` seconds.
pub fn horizon_index(horizons: &[f64], h: f64) -> usize {
    horizons
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - h).abs().total_cmp(&(b.1 - h).abs()))
        .map_or(0, |(i, _)| i)
}

/// Headline numbers for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub tracks: usize,
    pub fallbacks: usize,
    /// Median per-track ratio to AVE, percent.
    pub orientation_ratio_0_2s: f64,
    pub orientation_ratio_1s: f64,
    pub position_ratio_0_2s: f64,
    pub position_ratio_1s: f64,
    /// Horizons where the median ratio curve crosses 100% from below, s.
    pub orientation_crossover: Option<f64>,
    pub position_crossover: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema_version: String,
    pub dataset_seed: u64,
    pub horizons: usize,
    pub methods: Vec<MethodSummary>,
}

pub fn summarize(report: &ExperimentReport) -> Result<ReportSummary> {
    let orientation = ratio_curves(report, ErrorKind::Orientation)?;
    let position = ratio_curves(report, ErrorKind::Position)?;
    let horizons = report.methods.first().map(|m| m.horizons.clone()).unwrap_or_default();
    let (h02, h1) = (horizon_index(&horizons, 0.2), horizon_index(&horizons, 1.0));
    let at = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(f64::NAN);
    let methods = report
        .methods
        .iter()
        .zip(orientation.iter().zip(&position))
        .map(|(m, (o, p))| MethodSummary {
            method: m.method.clone(),
            tracks: m.tracks.len(),
            fallbacks: m.tracks.iter().filter(|t| t.fallback).count(),
            orientation_ratio_0_2s: at(&o.median_ratio, h02),
            orientation_ratio_1s: at(&o.median_ratio, h1),
            position_ratio_0_2s: at(&p.median_ratio, h02),
            position_ratio_1s: at(&p.median_ratio, h1),
            orientation_crossover: crossover(&horizons, &o.median_ratio),
            position_crossover: crossover(&horizons, &p.median_ratio),
        })
        .collect();
    Ok(ReportSummary {
        schema_version: report.schema_version.clone(),
        dataset_seed: report.dataset_seed,
        horizons: horizons.len(),
        methods,
    })
}
