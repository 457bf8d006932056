//! IMU measurement model: scale/misalignment, biases, white noise, gravity and
//! an injectable systematic error, in both the forward (simulation) and the
//! inverse (correction) direction.
//!
//! Gravity convention: `gravity` is the gravitational acceleration in the
//! World frame, `(0, 0, -9.81)` by default. An accelerometer at rest therefore
//! reads `+9.81` along its up axis, and correction adds `R_IW·g` back to
//! recover the kinematic acceleration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{mat3_row_major, Mat3, Rotation, Vec3};
use crate::rng::AxisStreams;

pub const STANDARD_GRAVITY: f64 = 9.81;

pub fn default_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

/// Per-IMU calibration and noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuIntrinsics {
    /// Gyroscope scale/misalignment correction, lower triangular.
    #[serde(with = "mat3_row_major")]
    pub c_g: Mat3,
    /// Accelerometer scale/misalignment correction, lower triangular.
    #[serde(with = "mat3_row_major")]
    pub c_a: Mat3,
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    /// Bias correlation times, s.
    pub gyro_bias_tau: f64,
    pub accel_bias_tau: f64,
    /// Discrete per-step bias decay.
    pub gamma_g: f64,
    pub gamma_a: f64,
    /// Treat `gamma_g`/`gamma_a` as zero (pure random-walk biases).
    pub ignore_decay: bool,
}

impl Default for ImuIntrinsics {
    /// Consumer-grade MEMS figures (MPU-9150 class).
    fn default() -> Self {
        ImuIntrinsics {
            c_g: Mat3::identity(),
            c_a: Mat3::identity(),
            gyro_noise_density: 8.7e-5,
            accel_noise_density: 3.9e-3,
            gyro_bias_walk: 2e-5,
            accel_bias_walk: 2e-4,
            gyro_bias_tau: 300.0,
            accel_bias_tau: 300.0,
            gamma_g: 0.0,
            gamma_a: 0.0,
            ignore_decay: true,
        }
    }
}

impl ImuIntrinsics {
    /// Noise-free, perfectly scaled sensor.
    pub fn ideal() -> Self {
        ImuIntrinsics {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            ..Default::default()
        }
    }

    /// Sets the discrete decay coefficients from the correlation times.
    pub fn with_decay_for_dt(mut self, dt: f64) -> Self {
        self.gamma_g = 1.0 - (-dt / self.gyro_bias_tau).exp();
        self.gamma_a = 1.0 - (-dt / self.accel_bias_tau).exp();
        self
    }

    pub fn effective_gamma(&self) -> (f64, f64) {
        if self.ignore_decay {
            (0.0, 0.0)
        } else {
            (self.gamma_g, self.gamma_a)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_correction(&self.c_g)?;
        check_correction(&self.c_a)?;
        for (name, m) in [("c_g", &self.c_g), ("c_a", &self.c_a)] {
            if m[(0, 1)] != 0.0 || m[(0, 2)] != 0.0 || m[(1, 2)] != 0.0 {
                return Err(Error::Validation(format!("{name} must be lower triangular")));
            }
        }
        let densities = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        ];
        if densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Validation("noise densities must be >= 0".into()));
        }
        if !(self.gyro_bias_tau > 0.0 && self.accel_bias_tau > 0.0) {
            return Err(Error::Validation("bias correlation times must be > 0".into()));
        }
        Ok(())
    }
}

fn check_correction(c: &Mat3) -> Result<()> {
    for i in 0..3 {
        let d = c[(i, i)];
        if !(d > 0.0) {
            return Err(Error::SingularCorrection { index: i, value: d });
        }
    }
    Ok(())
}

/// Keeps the lower triangle of `m`.
pub fn lower_triangle(m: &Mat3) -> Mat3 {
    Mat3::from_fn(|r, c| if c <= r { m[(r, c)] } else { 0.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    /// rad/s
    pub gyro: Vec3,
    /// m/s²
    pub accel: Vec3,
}

impl BiasState {
    pub fn new(gyro: Vec3, accel: Vec3) -> Self {
        BiasState { gyro, accel }
    }
}

/// Slow sinusoid added to one axis: `amplitude·sin(2πt/period + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisDrift {
    pub axis: usize,
    pub amplitude: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Gain applied to the whole systematic error from `start` onwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub start: f64,
    pub gain: f64,
}

/// Sensor error outside the calibration model. Enters on the corrected side
/// of the model, next to the bias and noise, so calibration cannot see it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystematicErrorSpec {
    /// Per-axis relative scale error on the true angular velocity.
    pub gyro_scale: [f64; 3],
    /// Per-axis relative scale error on the true specific force.
    pub accel_scale: [f64; 3],
    /// Constant offsets, rad/s.
    pub gyro_offset: [f64; 3],
    /// Constant offsets, m/s².
    pub accel_offset: [f64; 3],
    pub gyro_drift: Vec<AxisDrift>,
    pub accel_drift: Vec<AxisDrift>,
    /// Piecewise-constant activation over dataset time. Empty means always
    /// active at gain 1; otherwise the gain is zero before the first entry.
    pub schedule: Vec<Activation>,
}

impl SystematicErrorSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !(finite(&self.gyro_scale) && finite(&self.accel_scale) && finite(&self.gyro_offset) && finite(&self.accel_offset)) {
            return Err(Error::Validation("systematic error magnitudes must be finite".into()));
        }
        for d in self.gyro_drift.iter().chain(&self.accel_drift) {
            if d.axis > 2 || !(d.period > 0.0) || !d.amplitude.is_finite() {
                return Err(Error::Validation(format!("invalid drift {d:?}")));
            }
        }
        if self.schedule.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::Validation("activation schedule must be ordered".into()));
        }
        Ok(())
    }

    pub fn gain(&self, t: f64) -> f64 {
        if self.schedule.is_empty() {
            return 1.0;
        }
        self.schedule
            .iter()
            .rev()
            .find(|a| a.start <= t)
            .map_or(0.0, |a| a.gain)
    }

    fn drift(drifts: &[AxisDrift], t: f64) -> Vec3 {
        let mut out = Vec3::zeros();
        for d in drifts {
            out[d.axis] += d.amplitude * (std::f64::consts::TAU * t / d.period + d.phase).sin();
        }
        out
    }

    /// Systematic gyroscope error at `t` for true rate `omega`.
    pub fn gyro_error(&self, t: f64, omega: &Vec3) -> Vec3 {
        let gain = self.gain(t);
        if gain == 0.0 {
            return Vec3::zeros();
        }
        gain * (Vec3::from(self.gyro_scale).component_mul(omega) + Vec3::from(self.gyro_offset) + Self::drift(&self.gyro_drift, t))
    }

    /// Systematic accelerometer error at `t` for true specific force `force`.
    pub fn accel_error(&self, t: f64, force: &Vec3) -> Vec3 {
        let gain = self.gain(t);
        if gain == 0.0 {
            return Vec3::zeros();
        }
        gain * (Vec3::from(self.accel_scale).component_mul(force) + Vec3::from(self.accel_offset) + Self::drift(&self.accel_drift, t))
    }

    pub fn is_zero(&self) -> bool {
        *self == SystematicErrorSpec::default()
    }
}

/// Raw reading of one IMU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Measured angular rate ω̃, rad/s.
    pub gyro: Vec3,
    /// Measured specific force ã, m/s².
    pub accel: Vec3,
    pub imu: usize,
}

/// True motion of an IMU frame at one instant.
#[derive(Clone, Copy, Debug)]
pub struct TrueMotion {
    /// Body angular rate in the IMU frame.
    pub omega: Vec3,
    /// Acceleration of the IMU origin in the World frame.
    pub accel_world: Vec3,
    pub r_wi: Rotation,
}

/// Independent noise substreams of one IMU.
#[derive(Clone, Debug)]
pub struct NoiseStreams {
    pub gyro: AxisStreams,
    pub accel: AxisStreams,
}

impl NoiseStreams {
    pub fn new(seed: u64, imu: u32) -> Self {
        use crate::rng::Channel;
        NoiseStreams {
            gyro: AxisStreams::new(seed, imu, Channel::GyroNoise),
            accel: AxisStreams::new(seed, imu, Channel::AccelNoise),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiasWalkStreams {
    pub gyro: AxisStreams,
    pub accel: AxisStreams,
}

impl BiasWalkStreams {
    pub fn new(seed: u64, imu: u32) -> Self {
        use crate::rng::Channel;
        BiasWalkStreams {
            gyro: AxisStreams::new(seed, imu, Channel::GyroBiasWalk),
            accel: AxisStreams::new(seed, imu, Channel::AccelBiasWalk),
        }
    }
}

/// Inverse model: ω = C_g·ω̃ − b_g, a = C_a·ã − b_a + R_IW·g.
pub fn correct(
    sample: &ImuSample,
    intrinsics: &ImuIntrinsics,
    bias: &BiasState,
    r_iw: &Rotation,
    gravity: &Vec3,
) -> Result<(Vec3, Vec3)> {
    check_correction(&intrinsics.c_g)?;
    check_correction(&intrinsics.c_a)?;
    let omega = intrinsics.c_g * sample.gyro - bias.gyro;
    let accel = intrinsics.c_a * sample.accel - bias.accel + r_iw * gravity;
    Ok((omega, accel))
}

/// Forward model. Noise is white with variance `density²/dt` per axis.
#[allow(clippy::too_many_arguments)]
pub fn simulate_measurement(
    imu: usize,
    t: f64,
    dt: f64,
    motion: &TrueMotion,
    intrinsics: &ImuIntrinsics,
    bias: &BiasState,
    systematic: &SystematicErrorSpec,
    gravity: &Vec3,
    noise: &mut NoiseStreams,
) -> Result<ImuSample> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    check_correction(&intrinsics.c_g)?;
    check_correction(&intrinsics.c_a)?;
    let r_iw = motion.r_wi.transpose();
    let force = r_iw * (motion.accel_world - gravity);

    let scale = 1.0 / dt.sqrt();
    let n_g = noise.gyro.standard_normal() * (intrinsics.gyro_noise_density * scale);
    let n_a = noise.accel.standard_normal() * (intrinsics.accel_noise_density * scale);

    let gyro_true = motion.omega + bias.gyro + n_g + systematic.gyro_error(t, &motion.omega);
    let accel_true = force + bias.accel + n_a + systematic.accel_error(t, &force);

    let gyro = intrinsics
        .c_g
        .solve_lower_triangular(&gyro_true)
        .ok_or(Error::SingularCorrection { index: 0, value: 0.0 })?;
    let accel = intrinsics
        .c_a
        .solve_lower_triangular(&accel_true)
        .ok_or(Error::SingularCorrection { index: 0, value: 0.0 })?;
    Ok(ImuSample { t, gyro, accel, imu })
}

/// One step of b' = b − γ·b + ε, ε ~ N(0, σ_walk²·dt).
pub fn propagate_bias(bias: &BiasState, intrinsics: &ImuIntrinsics, dt: f64, walk: &mut BiasWalkStreams) -> Result<BiasState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let (gamma_g, gamma_a) = intrinsics.effective_gamma();
    let sq = dt.sqrt();
    let eps_g = walk.gyro.standard_normal() * (intrinsics.gyro_bias_walk * sq);
    let eps_a = walk.accel.standard_normal() * (intrinsics.accel_bias_walk * sq);
    Ok(BiasState {
        gyro: bias.gyro - gamma_g * bias.gyro + eps_g,
        accel: bias.accel - gamma_a * bias.accel + eps_a,
    })
}
