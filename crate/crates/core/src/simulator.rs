//! Seeded rig simulation: smooth ground-truth motion, per-IMU raw streams
//! through the forward error model, and noisy Master observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_model::{
    default_gravity, propagate_bias, simulate_measurement, BiasState, BiasWalkStreams, ImuIntrinsics, ImuSample, NoiseStreams,
    SystematicErrorSpec, TrueMotion,
};
use crate::kinematics::{inertial_acceleration, ImuExtrinsics, Pose};
use crate::lie::{exp_so3, hat, rotation_mean, AxisAngle, Mat3, Rotation, Vec3};
use crate::rng::{substream, AxisStreams, Channel};
use crate::spline::CubicSpline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    /// s
    pub duration: f64,
    /// Spacing of the random control points, s.
    pub control_cadence: f64,
    /// Per-axis bound on the control-point rotation vector, rad.
    pub orientation_amplitude: f64,
    /// Per-axis bound on the control-point position, m.
    pub translation_amplitude: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            duration: 15.0,
            control_cadence: 1.5,
            orientation_amplitude: 0.52,
            translation_amplitude: 0.3,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    /// Wide orientation swings for calibration records.
    pub fn calibration(duration: f64, seed: u64) -> Self {
        TrajectorySpec {
            duration,
            control_cadence: 1.0,
            orientation_amplitude: 1.2,
            translation_amplitude: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.control_cadence > 0.0) {
            return Err(Error::InvalidConfig("trajectory duration and cadence must be positive".into()));
        }
        if !(self.orientation_amplitude >= 0.0) || !(self.translation_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("trajectory amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth Master motion: `R(t) = Exp(φ(t))`, `p(t)` with `φ` and `p`
/// natural cubic splines.
#[derive(Clone, Debug)]
pub struct TrueTrajectory {
    phi: CubicSpline,
    position: CubicSpline,
    duration: f64,
}

/// Full kinematic state of the Master at one instant. Rates are in the
/// Master frame, accelerations in World.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrueState {
    pub t: f64,
    pub r: Rotation,
    pub omega: Vec3,
    pub omega_dot: Vec3,
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

impl TrueState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.r, self.v, self.p, self.t)
    }
}

/// `(c1, c2, c1'/θ, c2'/θ)` with `J_r = I − c1[φ]ₓ + c2[φ]ₓ²`.
fn jacobian_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 0.1 {
        let t4 = t2 * t2;
        (
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
            -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t4 = t2 * t2;
        (
            (1.0 - c) / t2,
            (theta - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / t4,
            ((1.0 - c) * theta - 3.0 * (theta - s)) / (t4 * theta),
        )
    }
}

impl TrueTrajectory {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn state(&self, t: f64) -> TrueState {
        let f = self.phi.eval(t);
        let (phi, phi_d, phi_dd) = (f.value, f.d1, f.d2);
        let theta = phi.norm();
        let (c1, c2, d1, d2) = jacobian_coefficients(theta);
        let h = hat(&phi);
        let hd = hat(&phi_d);
        let jr = Mat3::identity() - c1 * h + c2 * h * h;
        let rate = phi.dot(&phi_d);
        let jr_dot = -(d1 * rate) * h - c1 * hd + (d2 * rate) * h * h + c2 * (hd * h + h * hd);
        let x = self.position.eval(t);
        TrueState {
            t,
            r: exp_so3(&AxisAngle(phi)),
            omega: jr * phi_d,
            omega_dot: jr_dot * phi_d + jr * phi_dd,
            p: x.value,
            v: x.d1,
            a: x.d2,
        }
    }
}

pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<TrueTrajectory> {
    spec.validate()?;
    let n = (spec.duration / spec.control_cadence).ceil() as usize + 2;
    let times: Vec<f64> = (0..n).map(|j| j as f64 * spec.control_cadence).collect();
    let mut rng = substream(spec.seed, u32::MAX, Channel::Trajectory, 0);
    let mut draw = |amp: f64| -> Vec3 {
        if amp == 0.0 {
            Vec3::zeros()
        } else {
            Vec3::new(rng.random_range(-amp..=amp), rng.random_range(-amp..=amp), rng.random_range(-amp..=amp))
        }
    };
    let rot: Vec<Vec3> = (0..n).map(|_| draw(spec.orientation_amplitude)).collect();
    let pos: Vec<Vec3> = (0..n).map(|_| draw(spec.translation_amplitude)).collect();
    Ok(TrueTrajectory {
        phi: CubicSpline::natural(times.clone(), rot)?,
        position: CubicSpline::natural(times, pos)?,
        duration: spec.duration,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ImuConfig {
    pub extrinsics: ImuExtrinsics,
    pub intrinsics: ImuIntrinsics,
    pub systematic: SystematicErrorSpec,
    pub initial_bias: BiasState,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub imus: Vec<ImuConfig>,
    /// Hz
    pub imu_rate: f64,
    /// Hz
    pub master_rate: f64,
    /// rad
    pub master_orientation_sigma: f64,
    /// m
    pub master_position_sigma: f64,
    /// Master poses are the mean of this many independent tag poses.
    pub master_tags: usize,
    pub gravity: Vec3,
    /// Standard deviation of the true sampling instant around the nominal
    /// timestamp, s. Clamped to a quarter period.
    pub jitter_sigma: f64,
}

fn lower(diag: [f64; 3], off: [f64; 3]) -> Mat3 {
    Mat3::new(diag[0], 0.0, 0.0, off[0], diag[1], 0.0, off[1], off[2], diag[2])
}

impl Default for RigConfig {
    /// Three IMUs within ±5° of the Master axes, a few centimetres apart,
    /// each with its own scale and misalignment.
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let placements = [
            (Vec3::new(3.0, -2.0, 4.0) * deg, Vec3::new(0.04, 0.01, 0.0)),
            (Vec3::new(-4.0, 3.0, -2.0) * deg, Vec3::new(-0.02, 0.035, 0.005)),
            (Vec3::new(2.0, 4.5, -3.5) * deg, Vec3::new(-0.02, -0.035, -0.005)),
        ];
        let corrections = [
            (lower([1.012, 0.991, 1.006], [0.004, -0.003, 0.002]), lower([0.994, 1.009, 1.003], [-0.002, 0.005, 0.003])),
            (lower([0.993, 1.008, 0.996], [-0.003, 0.002, 0.004]), lower([1.007, 0.995, 1.011], [0.003, -0.004, 0.002])),
            (lower([1.004, 1.010, 0.989], [0.002, 0.004, -0.003]), lower([0.998, 1.004, 0.992], [0.004, 0.002, -0.005])),
        ];
        let biases = [
            BiasState::new(Vec3::new(0.02, -0.01, 0.005), Vec3::new(0.05, -0.08, 0.03)),
            BiasState::new(Vec3::new(-0.015, 0.008, 0.012), Vec3::new(-0.04, 0.06, 0.07)),
            BiasState::new(Vec3::new(0.006, 0.018, -0.009), Vec3::new(0.03, 0.02, -0.06)),
        ];
        let imus = (0..3)
            .map(|i| ImuConfig {
                extrinsics: ImuExtrinsics::new(exp_so3(&AxisAngle(placements[i].0)), placements[i].1),
                intrinsics: ImuIntrinsics {
                    c_g: corrections[i].0,
                    c_a: corrections[i].1,
                    ..ImuIntrinsics::default()
                },
                systematic: SystematicErrorSpec::default(),
                initial_bias: biases[i],
            })
            .collect();
        RigConfig {
            imus,
            imu_rate: 342.0,
            master_rate: 30.0,
            master_orientation_sigma: 0.2 * deg,
            master_position_sigma: 0.002,
            master_tags: 6,
            gravity: default_gravity(),
            jitter_sigma: 0.0,
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<()> {
        if self.imus.is_empty() {
            return Err(Error::EmptyImuSet);
        }
        if !(self.imu_rate > 0.0) || !(self.master_rate > 0.0) || self.master_rate > self.imu_rate {
            return Err(Error::InvalidConfig(format!(
                "rates must satisfy 0 < master ({}) <= imu ({})",
                self.master_rate, self.imu_rate
            )));
        }
        if !(self.master_orientation_sigma >= 0.0) || !(self.master_position_sigma >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be non-negative".into()));
        }
        if self.master_tags == 0 {
            return Err(Error::InvalidConfig("master_tags must be >= 1".into()));
        }
        for imu in &self.imus {
            imu.intrinsics.validate()?;
            imu.systematic.validate()?;
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    pub fn extrinsics(&self) -> Vec<ImuExtrinsics> {
        self.imus.iter().map(|i| i.extrinsics).collect()
    }

    pub fn intrinsics(&self) -> Vec<ImuIntrinsics> {
        self.imus.iter().map(|i| i.intrinsics.clone()).collect()
    }

    /// Same rig with every noise source, bias and systematic error removed.
    pub fn noiseless(&self) -> Self {
        let mut out = self.clone();
        out.master_orientation_sigma = 0.0;
        out.master_position_sigma = 0.0;
        out.jitter_sigma = 0.0;
        for imu in &mut out.imus {
            imu.intrinsics.gyro_noise_density = 0.0;
            imu.intrinsics.accel_noise_density = 0.0;
            imu.intrinsics.gyro_bias_walk = 0.0;
            imu.intrinsics.accel_bias_walk = 0.0;
            imu.systematic = SystematicErrorSpec::default();
            imu.initial_bias = BiasState::default();
        }
        out
    }
}

/// One fiducial pose fix of the Master.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterObservation {
    pub t: f64,
    pub r: Rotation,
    pub p: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rig: RigConfig,
    pub seed: u64,
    pub imu_streams: Vec<Vec<ImuSample>>,
    pub master: Vec<MasterObservation>,
    /// Master pose and velocity at every IMU timestamp.
    pub ground_truth: Vec<Pose>,
}

impl Dataset {
    pub fn duration(&self) -> f64 {
        match (self.ground_truth.first(), self.ground_truth.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn imu_count(&self) -> usize {
        self.imu_streams.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if self.imu_streams.len() != self.rig.imus.len() {
            return Err(Error::Validation(format!(
                "{} streams for {} configured IMUs",
                self.imu_streams.len(),
                self.rig.imus.len()
            )));
        }
        let times: Vec<f64> = self.ground_truth.iter().map(|p| p.t).collect();
        crate::spline::check_increasing(&times)?;
        for (i, s) in self.imu_streams.iter().enumerate() {
            if s.len() != times.len() || s.iter().zip(&times).any(|(a, t)| a.t != *t) {
                return Err(Error::GridMismatch(format!("IMU {i} stream is not on the ground-truth grid")));
            }
        }
        let master: Vec<f64> = self.master.iter().map(|m| m.t).collect();
        crate::spline::check_increasing(&master)?;
        Ok(())
    }
}

/// Motion of IMU `ext` rigidly attached to the Master in state `s`.
pub fn imu_motion(s: &TrueState, ext: &ImuExtrinsics) -> TrueMotion {
    let r_im = ext.r_im();
    let omega = r_im * s.omega;
    let omega_dot = r_im * s.omega_dot;
    let a_master = r_im * (s.r.transpose() * s.a);
    let a_imu = a_master - inertial_acceleration(&omega, &omega_dot, &ext.p_im);
    let r_wi = s.r * ext.r_mi;
    TrueMotion {
        omega,
        accel_world: r_wi * a_imu,
        r_wi,
    }
}

/// Dataset plus the true bias track of every IMU.
pub fn simulate_rig_with_biases(traj: &TrueTrajectory, rig: &RigConfig, seed: u64) -> Result<(Dataset, Vec<Vec<BiasState>>)> {
    rig.validate()?;
    let dt = rig.dt();
    let n = (traj.duration() * rig.imu_rate).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / rig.imu_rate).collect();
    let ground_truth: Vec<Pose> = times.iter().map(|&t| traj.state(t).pose()).collect();

    let mut streams = Vec::with_capacity(rig.imus.len());
    let mut bias_tracks = Vec::with_capacity(rig.imus.len());
    for (i, imu) in rig.imus.iter().enumerate() {
        let key = i as u32;
        let mut noise = NoiseStreams::new(seed, key);
        let mut walk = BiasWalkStreams::new(seed, key);
        let mut jitter = substream(seed, key, Channel::Jitter, 0);
        let mut bias = imu.initial_bias;
        let mut samples = Vec::with_capacity(times.len());
        let mut biases = Vec::with_capacity(times.len());
        for &t in &times {
            let offset = if rig.jitter_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut jitter);
                (z * rig.jitter_sigma).clamp(-0.25 * dt, 0.25 * dt)
            } else {
                0.0
            };
            let motion = imu_motion(&traj.state(t + offset), &imu.extrinsics);
            samples.push(simulate_measurement(
                i,
                t,
                dt,
                &motion,
                &imu.intrinsics,
                &bias,
                &imu.systematic,
                &rig.gravity,
                &mut noise,
            )?);
            biases.push(bias);
            bias = propagate_bias(&bias, &imu.intrinsics, dt, &mut walk)?;
        }
        streams.push(samples);
        bias_tracks.push(biases);
    }

    let m = (traj.duration() * rig.master_rate + 1e-9).floor() as usize;
    let tags = rig.master_tags;
    let tag_scale = (tags as f64).sqrt();
    let mut orient: Vec<AxisStreams> = (0..tags).map(|j| AxisStreams::new(seed, j as u32, Channel::MasterOrientation)).collect();
    let mut position: Vec<AxisStreams> = (0..tags).map(|j| AxisStreams::new(seed, j as u32, Channel::MasterPosition)).collect();
    let mut master = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let t = j as f64 / rig.master_rate;
        let s = traj.state(t);
        let mut rots = Vec::with_capacity(tags);
        let mut p = Vec3::zeros();
        for k in 0..tags {
            let dtheta = orient[k].standard_normal() * (rig.master_orientation_sigma * tag_scale);
            rots.push(s.r * exp_so3(&AxisAngle(dtheta)));
            p += s.p + position[k].standard_normal() * (rig.master_position_sigma * tag_scale);
        }
        master.push(MasterObservation {
            t,
            r: rotation_mean(&rots)?,
            p: p / tags as f64,
        });
    }

    Ok((
        Dataset {
            rig: rig.clone(),
            seed,
            imu_streams: streams,
            master,
            ground_truth,
        },
        bias_tracks,
    ))
}

pub fn simulate_rig(traj: &TrueTrajectory, rig: &RigConfig, seed: u64) -> Result<Dataset> {
    Ok(simulate_rig_with_biases(traj, rig, seed)?.0)
}

/// One evaluation track: closed loop on `[start, split]`, open loop on
/// `[split, end]`. Sample indices refer to the IMU grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSegment {
    pub index: usize,
    pub start: f64,
    pub split: f64,
    pub end: f64,
    pub start_sample: usize,
    pub split_sample: usize,
    pub end_sample: usize,
}

pub fn segment_tracks(dataset: &Dataset, closed_loop_s: f64, open_loop_s: f64) -> Result<Vec<TrackSegment>> {
    if !(closed_loop_s > 0.0) || !(open_loop_s > 0.0) {
        return Err(Error::InvalidConfig("closed and open loop lengths must be positive".into()));
    }
    let needed = closed_loop_s + open_loop_s;
    let duration = dataset.duration();
    let count = (duration / needed + 1e-9).floor() as usize;
    if count == 0 {
        return Err(Error::TooShortDataset { duration, needed });
    }
    let t0 = dataset.ground_truth[0].t;
    let rate = dataset.rig.imu_rate;
    let last = dataset.ground_truth.len() - 1;
    let index = |t: f64| (((t - t0) * rate).round() as usize).min(last);
    Ok((0..count)
        .map(|j| {
            let start = t0 + j as f64 * needed;
            let split = start + closed_loop_s;
            let end = start + needed;
            TrackSegment {
                index: j,
                start,
                split,
                end,
                start_sample: index(start),
                split_sample: index(split),
                end_sample: index(end),
            }
        })
        .collect())
}

/// Deterministic per-track seed.
pub fn track_seed(seed: u64, track: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(track as u64 + 1);
    rng.random()
}
