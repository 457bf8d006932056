//! Batch estimation over the five-term cost: orientation, velocity and
//! position residuals against the Master reference plus gyro and accel bias
//! increment penalties.
//!
//! Predicted states come from rolling the kinematic model forward through
//! the corrected IMU samples. The record is cut into segments; the state at
//! the start of every segment is a free variable, so each segment is one
//! shooting interval fitted to the reference. Biases are free per sample.
//! Stage I additionally frees `C_g`, `C_a` and `R_MI` per IMU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_model::{default_gravity, BiasState, ImuIntrinsics, ImuSample};
use crate::kinematics::{inertial_acceleration, Pose};
use crate::lie::{
    exp_so3, hat, log_so3, mat3_row_major, right_jacobian, right_jacobian_inv, AxisAngle, Mat3, Rotation, Vec3, RENORMALIZE_EVERY,
};
use crate::optim::{minimize, Objective, OptimizationReport, OptimizerConfig, Termination};

/// Free entries of a lower-triangular correction matrix, in flat order.
pub const LOWER: [(usize, usize); 6] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)];

/// Projection floor for the diagonal of `C_g`/`C_a`.
pub const MIN_DIAGONAL: f64 = 1e-3;

const PARAMS_PER_IMU: usize = 15;
const STATE_PER_SAMPLE: usize = 15;
const ANCHOR_DIM: usize = 9;
const BIAS_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Intrinsics, extrinsic rotation, states and biases.
    One,
    /// States and biases with fixed intrinsics and extrinsics.
    Two,
}

/// Raw IMU streams on a common grid plus the Master reference at every
/// grid instant.
#[derive(Clone, Debug)]
pub struct CalibrationData {
    pub reference: Vec<Pose>,
    pub streams: Vec<Vec<ImuSample>>,
    /// `p_IM` per IMU, m.
    pub lever_arms: Vec<Vec3>,
}

impl CalibrationData {
    pub fn new(reference: Vec<Pose>, streams: Vec<Vec<ImuSample>>, lever_arms: Vec<Vec3>) -> Result<Self> {
        let data = CalibrationData {
            reference,
            streams,
            lever_arms,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::EmptyImuSet);
        }
        if self.lever_arms.len() != self.streams.len() {
            return Err(Error::GridMismatch(format!(
                "{} lever arms for {} IMU streams",
                self.lever_arms.len(),
                self.streams.len()
            )));
        }
        let k = self.reference.len();
        if k < 2 {
            return Err(Error::GridMismatch("need at least two reference states".into()));
        }
        let times: Vec<f64> = self.reference.iter().map(|p| p.t).collect();
        crate::spline::check_increasing(&times)?;
        for (i, s) in self.streams.iter().enumerate() {
            if s.len() != k {
                return Err(Error::GridMismatch(format!("IMU {i} has {} samples, reference has {k}", s.len())));
            }
            for (j, (a, t)) in s.iter().zip(&times).enumerate() {
                if (a.t - t).abs() > 1e-9 {
                    return Err(Error::GridMismatch(format!("IMU {i} sample {j} at {} but reference at {t}", a.t)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn imu_count(&self) -> usize {
        self.streams.len()
    }

    fn time(&self, k: usize) -> f64 {
        self.reference[k].t
    }

    /// Ratio of smallest to largest eigenvalue of the raw gyro covariance,
    /// pooled over IMUs. Small values mean poor rotational excitation.
    pub fn excitation(&self) -> f64 {
        let mut mean = Vec3::zeros();
        let mut n = 0.0;
        for s in &self.streams {
            for x in s {
                mean += x.gyro;
                n += 1.0;
            }
        }
        mean /= n;
        let mut cov = Mat3::zeros();
        for s in &self.streams {
            for x in s {
                let d = x.gyro - mean;
                cov += d * d.transpose();
            }
        }
        let eig = (cov / n).symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 {
            0.0
        } else {
            lo / hi
        }
    }
}

/// Per-block multipliers on the optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepScales {
    pub rotation: f64,
    pub velocity: f64,
    pub position: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
    pub correction: f64,
    pub extrinsic: f64,
}

impl Default for StepScales {
    fn default() -> Self {
        StepScales {
            rotation: 1.0,
            velocity: 1.0,
            position: 1.0,
            bias_gyro: 1.0,
            bias_accel: 1.0,
            correction: 1.0,
            extrinsic: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    #[serde(with = "mat3_row_major")]
    pub sigma_theta: Mat3,
    #[serde(with = "mat3_row_major")]
    pub sigma_v: Mat3,
    #[serde(with = "mat3_row_major")]
    pub sigma_p: Mat3,
    #[serde(with = "mat3_row_major")]
    pub sigma_bg: Mat3,
    #[serde(with = "mat3_row_major")]
    pub sigma_ba: Mat3,
    pub gamma_g: f64,
    pub gamma_a: f64,
    /// Samples per shooting segment.
    pub segment_len: usize,
    pub gravity: Vec3,
    pub step_scales: StepScales,
    pub optimizer: OptimizerConfig,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::from_noise(&ImuIntrinsics::default(), 1.0 / 342.0).with_master_noise(0.2f64.to_radians(), 0.002, 30.0)
    }
}

impl CostConfig {
    /// Diagonal weights from the noise densities, each variance scaled by
    /// `dt`. Zero densities are floored so every matrix stays SPD.
    pub fn from_noise(intr: &ImuIntrinsics, dt: f64) -> Self {
        let var = |sigma: f64, floor: f64| Mat3::identity() * sigma.max(floor).powi(2) * dt;
        let (gamma_g, gamma_a) = intr.effective_gamma();
        CostConfig {
            sigma_theta: var(intr.gyro_noise_density, 1e-5),
            sigma_v: var(intr.accel_noise_density, 1e-4),
            sigma_p: var(intr.accel_noise_density, 1e-4) * dt * dt,
            sigma_bg: var(intr.gyro_bias_walk, 1e-6),
            sigma_ba: var(intr.accel_bias_walk, 1e-5),
            gamma_g,
            gamma_a,
            segment_len: 342,
            gravity: default_gravity(),
            step_scales: StepScales::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Adds the reference noise of the Master: orientation and position
    /// variances, and the velocity variance of a derivative taken at
    /// `master_rate`.
    pub fn with_master_noise(mut self, orientation_sigma: f64, position_sigma: f64, master_rate: f64) -> Self {
        self.sigma_theta += Mat3::identity() * orientation_sigma.powi(2);
        self.sigma_p += Mat3::identity() * position_sigma.powi(2);
        self.sigma_v += Mat3::identity() * (position_sigma * master_rate).powi(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.information()?;
        if self.segment_len == 0 {
            return Err(Error::InvalidConfig("segment_len must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    fn information(&self) -> Result<Information> {
        Ok(Information {
            theta: spd_inverse(&self.sigma_theta, "sigma_theta")?,
            v: spd_inverse(&self.sigma_v, "sigma_v")?,
            p: spd_inverse(&self.sigma_p, "sigma_p")?,
            bg: spd_inverse(&self.sigma_bg, "sigma_bg")?,
            ba: spd_inverse(&self.sigma_ba, "sigma_ba")?,
        })
    }
}

fn spd_inverse(m: &Mat3, name: &'static str) -> Result<Mat3> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NotSpd { name });
    }
    m.cholesky().map(|c| c.inverse()).ok_or(Error::NotSpd { name })
}

#[derive(Clone, Debug)]
struct Information {
    theta: Mat3,
    v: Mat3,
    p: Mat3,
    bg: Mat3,
    ba: Mat3,
}

/// Free initial state of one shooting segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub r: Rotation,
    pub v: Vec3,
    pub p: Vec3,
}

impl From<&Pose> for Anchor {
    fn from(p: &Pose) -> Self {
        Anchor { r: p.r, v: p.v, p: p.p }
    }
}

/// Calibrated parameters of one IMU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuCalibration {
    #[serde(with = "mat3_row_major")]
    pub c_g: Mat3,
    #[serde(with = "mat3_row_major")]
    pub c_a: Mat3,
    pub r_mi: Rotation,
    pub final_bias: BiasState,
}

impl Default for ImuCalibration {
    fn default() -> Self {
        ImuCalibration {
            c_g: Mat3::identity(),
            c_a: Mat3::identity(),
            r_mi: Rotation::identity(),
            final_bias: BiasState::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuVariables {
    pub c_g: Mat3,
    pub c_a: Mat3,
    pub r_mi: Rotation,
    pub anchors: Vec<Anchor>,
    pub bias_g: Vec<Vec3>,
    pub bias_a: Vec<Vec3>,
}

/// Every estimated quantity. Per IMU and sample the container holds 15
/// state slots (orientation, velocity, position and both biases); Stage I
/// adds 15 parameters per IMU. Of the state slots, orientation, velocity
/// and position are free only at segment starts and rolled out elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationVariables {
    pub stage: Stage,
    pub segment_len: usize,
    pub imus: Vec<ImuVariables>,
}

/// Inclusive sample ranges of the shooting segments for `k` samples.
pub fn segments(k: usize, len: usize) -> Vec<(usize, usize)> {
    if k == 0 {
        return Vec::new();
    }
    let n = ((k - 1) / len.max(1)).max(1);
    (0..n)
        .map(|j| {
            let s = j * len;
            let e = if j + 1 < n { (j + 1) * len - 1 } else { k - 1 };
            (s, e)
        })
        .collect()
}

impl EstimationVariables {
    /// Anchors at the reference, zero biases, and the given parameters
    /// (identity when `params` is `None`).
    pub fn initial(stage: Stage, data: &CalibrationData, segment_len: usize, params: Option<&[ImuCalibration]>) -> Result<Self> {
        data.validate()?;
        if let Some(p) = params {
            if p.len() != data.imu_count() {
                return Err(Error::IncompatibleCalibration {
                    calibration: p.len(),
                    dataset: data.imu_count(),
                });
            }
        }
        let k = data.len();
        let segs = segments(k, segment_len);
        let imus = (0..data.imu_count())
            .map(|i| {
                let cal = params.map(|p| p[i].clone()).unwrap_or_default();
                ImuVariables {
                    c_g: cal.c_g,
                    c_a: cal.c_a,
                    r_mi: cal.r_mi,
                    anchors: segs.iter().map(|&(s, _)| Anchor::from(&data.reference[s])).collect(),
                    bias_g: vec![Vec3::zeros(); k],
                    bias_a: vec![Vec3::zeros(); k],
                }
            })
            .collect();
        Ok(EstimationVariables { stage, segment_len, imus })
    }

    pub fn samples(&self) -> usize {
        self.imus.first().map_or(0, |v| v.bias_g.len())
    }

    /// Size of the estimation container: `(15K + 15)N` in Stage I and
    /// `15KN` in Stage II.
    pub fn nominal_count(&self) -> usize {
        let per_imu = STATE_PER_SAMPLE * self.samples() + if self.stage == Stage::One { PARAMS_PER_IMU } else { 0 };
        per_imu * self.imus.len()
    }

    fn params_len(&self) -> usize {
        if self.stage == Stage::One {
            PARAMS_PER_IMU
        } else {
            0
        }
    }

    fn imu_len(&self) -> usize {
        self.params_len() + ANCHOR_DIM * self.imus.first().map_or(0, |v| v.anchors.len()) + BIAS_DIM * self.samples()
    }

    /// Number of free coordinates seen by the optimizer.
    pub fn free_count(&self) -> usize {
        self.imu_len() * self.imus.len()
    }

    /// Applies a step in local coordinates (see [`evaluate_cost`] for the
    /// layout). Rotations move by right retraction; corrections are
    /// projected back to a positive diagonal.
    pub fn retract(&self, step: &[f64]) -> Self {
        let mut out = self.clone();
        let per = self.imu_len();
        let pl = self.params_len();
        for (i, imu) in out.imus.iter_mut().enumerate() {
            let d = &step[i * per..(i + 1) * per];
            if self.stage == Stage::One {
                imu.r_mi = imu.r_mi * exp_so3(&AxisAngle(Vec3::new(d[0], d[1], d[2])));
                for (n, &(r, c)) in LOWER.iter().enumerate() {
                    imu.c_g[(r, c)] += d[3 + n];
                    imu.c_a[(r, c)] += d[9 + n];
                }
                for j in 0..3 {
                    imu.c_g[(j, j)] = imu.c_g[(j, j)].max(MIN_DIAGONAL);
                    imu.c_a[(j, j)] = imu.c_a[(j, j)].max(MIN_DIAGONAL);
                }
            }
            let na = imu.anchors.len();
            for (j, a) in imu.anchors.iter_mut().enumerate() {
                let o = pl + ANCHOR_DIM * j;
                a.r = a.r * exp_so3(&AxisAngle(Vec3::new(d[o], d[o + 1], d[o + 2])));
                a.v += Vec3::new(d[o + 3], d[o + 4], d[o + 5]);
                a.p += Vec3::new(d[o + 6], d[o + 7], d[o + 8]);
            }
            let ob = pl + ANCHOR_DIM * na;
            for k in 0..imu.bias_g.len() {
                let o = ob + BIAS_DIM * k;
                imu.bias_g[k] += Vec3::new(d[o], d[o + 1], d[o + 2]);
                imu.bias_a[k] += Vec3::new(d[o + 3], d[o + 4], d[o + 5]);
            }
        }
        out
    }

    fn step_scales(&self, s: &StepScales) -> Vec<f64> {
        let mut imu = Vec::with_capacity(self.imu_len());
        if self.stage == Stage::One {
            imu.extend([s.extrinsic; 3]);
            imu.extend([s.correction; 12]);
        }
        for _ in 0..self.imus.first().map_or(0, |v| v.anchors.len()) {
            imu.extend([s.rotation; 3]);
            imu.extend([s.velocity; 3]);
            imu.extend([s.position; 3]);
        }
        for _ in 0..self.samples() {
            imu.extend([s.bias_gyro; 3]);
            imu.extend([s.bias_accel; 3]);
        }
        imu.repeat(self.imus.len())
    }

    pub fn calibration(&self) -> Vec<ImuCalibration> {
        self.imus
            .iter()
            .map(|v| ImuCalibration {
                c_g: v.c_g,
                c_a: v.c_a,
                r_mi: v.r_mi,
                final_bias: BiasState::new(*v.bias_g.last().unwrap_or(&Vec3::zeros()), *v.bias_a.last().unwrap_or(&Vec3::zeros())),
            })
            .collect()
    }

    pub fn bias_tracks(&self) -> Vec<Vec<BiasState>> {
        self.imus
            .iter()
            .map(|v| v.bias_g.iter().zip(&v.bias_a).map(|(g, a)| BiasState::new(*g, *a)).collect())
            .collect()
    }
}

/// The five cost terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub orientation: f64,
    pub velocity: f64,
    pub position: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.orientation + self.velocity + self.position + self.bias_gyro + self.bias_accel
    }

    fn add(&mut self, o: &CostBreakdown) {
        self.orientation += o.orientation;
        self.velocity += o.velocity;
        self.position += o.position;
        self.bias_gyro += o.bias_gyro;
        self.bias_accel += o.bias_accel;
    }
}

fn check_shape(vars: &EstimationVariables, data: &CalibrationData) -> Result<()> {
    data.validate()?;
    let segs = segments(data.len(), vars.segment_len).len();
    if vars.imus.len() != data.imu_count() {
        return Err(Error::GridMismatch(format!("{} IMU variable sets for {} streams", vars.imus.len(), data.imu_count())));
    }
    for (i, v) in vars.imus.iter().enumerate() {
        if v.bias_g.len() != data.len() || v.bias_a.len() != data.len() || v.anchors.len() != segs {
            return Err(Error::GridMismatch(format!(
                "IMU {i}: {} bias samples and {} anchors for {} samples in {segs} segments",
                v.bias_g.len(),
                v.anchors.len(),
                data.len()
            )));
        }
    }
    Ok(())
}

struct Pass<'a> {
    data: &'a CalibrationData,
    cfg: &'a CostConfig,
    info: &'a Information,
    segs: &'a [(usize, usize)],
    stage: Stage,
}

impl Pass<'_> {
    /// Cost of one IMU; optionally writes its gradient slice and the
    /// rolled-out states.
    fn run(&self, i: usize, vars: &ImuVariables, grad: Option<&mut [f64]>, mut states: Option<&mut Vec<Pose>>) -> CostBreakdown {
        let data = self.data;
        let samples = &data.streams[i];
        let refs = &data.reference;
        let p_im = data.lever_arms[i];
        let kk = samples.len();
        let g = self.cfg.gravity;
        let info = self.info;
        let r_mi = vars.r_mi;
        let r_im = r_mi.transpose();

        let dt: Vec<f64> = (0..kk)
            .map(|k| if k + 1 < kk { data.time(k + 1) - data.time(k) } else { data.time(k) - data.time(k - 1) })
            .collect();
        let mut w_i = Vec::with_capacity(kk);
        for (k, s) in samples.iter().enumerate() {
            w_i.push(vars.c_g * s.gyro - vars.bias_g[k]);
        }
        let mut q = Vec::with_capacity(kk);
        for (k, s) in samples.iter().enumerate() {
            let wd = if k > 0 { (w_i[k] - w_i[k - 1]) / (data.time(k) - data.time(k - 1)) } else { Vec3::zeros() };
            q.push(vars.c_a * s.accel - vars.bias_a[k] + inertial_acceleration(&w_i[k], &wd, &p_im));
        }
        let w_m: Vec<Vec3> = w_i.iter().map(|w| r_mi * w).collect();
        let w_q: Vec<Vec3> = q.iter().map(|x| r_mi * x).collect();

        let mut cost = CostBreakdown::default();
        let want_grad = grad.is_some();
        let mut rots = vec![Rotation::identity(); kk];
        let mut exps = vec![Rotation::identity(); kk];
        let mut res = vec![(Vec3::zeros(), Vec3::zeros(), Vec3::zeros()); kk];
        let mut g_wm = vec![Vec3::zeros(); if want_grad { kk } else { 0 }];
        let mut g_wq = g_wm.clone();
        let mut g_anchor = Vec::new();

        for (j, &(s, e)) in self.segs.iter().enumerate() {
            let a = &vars.anchors[j];
            let (mut r, mut v, mut p) = (a.r, a.v, a.p);
            for k in s..=e {
                rots[k] = r;
                if let Some(st) = states.as_deref_mut() {
                    st.push(Pose::new(r, v, p, data.time(k)));
                }
                let rt = log_so3(&(refs[k].r.transpose() * r)).0;
                let rv = refs[k].v - v;
                let rp = refs[k].p - p;
                cost.orientation += rt.dot(&(info.theta * rt));
                cost.velocity += rv.dot(&(info.v * rv));
                cost.position += rp.dot(&(info.p * rp));
                res[k] = (rt, rv, rp);
                if k < e {
                    let h = dt[k];
                    let ek = exp_so3(&AxisAngle(w_m[k] * h));
                    exps[k] = ek;
                    let f = r * w_q[k] + g;
                    p += v * h + 0.5 * f * h * h;
                    v += f * h;
                    r = r * ek;
                    if (k + 1 - s) % RENORMALIZE_EVERY == 0 {
                        r = r.renormalized();
                    }
                }
            }
            if want_grad {
                let (mut gr, mut gv, mut gp) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
                for k in (s..=e).rev() {
                    if k < e {
                        let h = dt[k];
                        let gf = gv * h + gp * (0.5 * h * h);
                        let rk_t = rots[k].transpose();
                        let rgf = rk_t * gf;
                        g_wm[k] += right_jacobian(&(w_m[k] * h)).transpose() * gr * h;
                        g_wq[k] += rgf;
                        gr = exps[k].matrix() * gr + hat(&w_q[k]) * rgf;
                        gv += gp * h;
                    }
                    let (rt, rv, rp) = res[k];
                    gr += right_jacobian_inv(&rt).transpose() * (2.0 * (info.theta * rt));
                    gv -= 2.0 * (info.v * rv);
                    gp -= 2.0 * (info.p * rp);
                }
                g_anchor.push((gr, gv, gp));
            }
        }

        // Bias increments.
        let (keep_g, keep_a) = (1.0 - self.cfg.gamma_g, 1.0 - self.cfg.gamma_a);
        let mut g_bg = vec![Vec3::zeros(); if want_grad { kk } else { 0 }];
        let mut g_ba = g_bg.clone();
        for k in 0..kk.saturating_sub(1) {
            let dg = vars.bias_g[k + 1] - keep_g * vars.bias_g[k];
            let da = vars.bias_a[k + 1] - keep_a * vars.bias_a[k];
            let (wdg, wda) = (info.bg * dg, info.ba * da);
            cost.bias_gyro += dg.dot(&wdg);
            cost.bias_accel += da.dot(&wda);
            if want_grad {
                g_bg[k + 1] += 2.0 * wdg;
                g_bg[k] -= 2.0 * keep_g * wdg;
                g_ba[k + 1] += 2.0 * wda;
                g_ba[k] -= 2.0 * keep_a * wda;
            }
        }

        let Some(out) = grad else {
            return cost;
        };

        // Chain rule from the Master-frame inputs down to the variables.
        let mut g_wi = vec![Vec3::zeros(); kk];
        let mut g_rmi = Vec3::zeros();
        let mut g_cg = Mat3::zeros();
        let mut g_ca = Mat3::zeros();
        for k in 0..kk {
            let gwm_i = r_im * g_wm[k];
            let gq = r_im * g_wq[k];
            g_wi[k] += gwm_i;
            g_rmi += hat(&w_i[k]) * gwm_i + hat(&q[k]) * gq;
            g_ba[k] -= gq;
            g_ca += gq * samples[k].accel.transpose();
            let w = w_i[k];
            g_wi[k] += w.dot(&p_im) * gq + p_im * w.dot(&gq) - 2.0 * w * p_im.dot(&gq);
            if k > 0 {
                let gwd = hat(&p_im) * gq / (data.time(k) - data.time(k - 1));
                g_wi[k] += gwd;
                g_wi[k - 1] -= gwd;
            }
        }
        for k in 0..kk {
            g_bg[k] -= g_wi[k];
            g_cg += g_wi[k] * samples[k].gyro.transpose();
        }

        let mut o = 0;
        if self.stage == Stage::One {
            out[0..3].copy_from_slice(g_rmi.as_slice());
            for (n, &(r, c)) in LOWER.iter().enumerate() {
                out[3 + n] = g_cg[(r, c)];
                out[9 + n] = g_ca[(r, c)];
            }
            o = PARAMS_PER_IMU;
        }
        for (gr, gv, gp) in &g_anchor {
            out[o..o + 3].copy_from_slice(gr.as_slice());
            out[o + 3..o + 6].copy_from_slice(gv.as_slice());
            out[o + 6..o + 9].copy_from_slice(gp.as_slice());
            o += ANCHOR_DIM;
        }
        for k in 0..kk {
            out[o..o + 3].copy_from_slice(g_bg[k].as_slice());
            out[o + 3..o + 6].copy_from_slice(g_ba[k].as_slice());
            o += BIAS_DIM;
        }
        cost
    }
}

fn run_all(
    vars: &EstimationVariables,
    data: &CalibrationData,
    cfg: &CostConfig,
    want_grad: bool,
    mut states: Option<&mut Vec<Vec<Pose>>>,
) -> Result<(CostBreakdown, Vec<f64>)> {
    check_shape(vars, data)?;
    let info = cfg.information()?;
    let segs = segments(data.len(), vars.segment_len);
    let pass = Pass {
        data,
        cfg,
        info: &info,
        segs: &segs,
        stage: vars.stage,
    };
    let per = vars.imu_len();
    let mut grad = if want_grad { vec![0.0; per * vars.imus.len()] } else { Vec::new() };
    let mut total = CostBreakdown::default();
    for (i, v) in vars.imus.iter().enumerate() {
        let slice = want_grad.then(|| &mut grad[i * per..(i + 1) * per]);
        let mut st = Vec::new();
        let c = pass.run(i, v, slice, states.is_some().then_some(&mut st));
        if let Some(all) = states.as_deref_mut() {
            all.push(st);
        }
        total.add(&c);
    }
    Ok((total, grad))
}

/// Total cost and its gradient. Per IMU the gradient is laid out as:
/// Stage I only, `R_MI` tangent (3), lower `C_g` (6), lower `C_a` (6);
/// then per segment the anchor's orientation tangent, velocity and
/// position (9); then per sample `b_g`, `b_a` (6). IMU blocks follow each
/// other in order.
pub fn evaluate_cost(vars: &EstimationVariables, data: &CalibrationData, cfg: &CostConfig) -> Result<(f64, Vec<f64>)> {
    let (c, g) = run_all(vars, data, cfg, true, None)?;
    Ok((c.total(), g))
}

pub fn cost_breakdown(vars: &EstimationVariables, data: &CalibrationData, cfg: &CostConfig) -> Result<CostBreakdown> {
    Ok(run_all(vars, data, cfg, false, None)?.0)
}

/// Rolled-out Master states per IMU at every sample.
pub fn rollout_states(vars: &EstimationVariables, data: &CalibrationData, cfg: &CostConfig) -> Result<Vec<Vec<Pose>>> {
    let mut states = Vec::new();
    run_all(vars, data, cfg, false, Some(&mut states))?;
    Ok(states)
}

/// Hierarchical midpoint basis for a bias track of `n` samples: the first
/// value, the end-to-end change along a ramp, then midpoint displacements
/// from linear interpolation on successive bisections. Under a random walk
/// the coefficients are independent, so per-coordinate steps scaled by
/// their standard deviation keep the walk term well conditioned.
struct BridgeBasis {
    n: usize,
    /// `(mid, lo, hi, w_lo, w_hi)` in parent-first order.
    ops: Vec<(usize, usize, usize, f64, f64)>,
    /// Coefficient standard deviation for a unit-variance walk increment;
    /// `None` for the free level.
    unit_std: Vec<Option<f64>>,
}

impl BridgeBasis {
    fn new(n: usize) -> Self {
        let mut unit_std = vec![None; n];
        let mut ops = Vec::new();
        if n > 1 {
            unit_std[n - 1] = Some(((n - 1) as f64).sqrt());
            let mut stack = vec![(0, n - 1)];
            while let Some((lo, hi)) = stack.pop() {
                if hi - lo < 2 {
                    continue;
                }
                let mid = (lo + hi) / 2;
                let (a, b, w) = ((mid - lo) as f64, (hi - mid) as f64, (hi - lo) as f64);
                ops.push((mid, lo, hi, b / w, a / w));
                unit_std[mid] = Some((a * b / w).sqrt());
                stack.push((mid, hi));
                stack.push((lo, mid));
            }
        }
        BridgeBasis { n, ops, unit_std }
    }

    /// Coefficients to values, in place on every `stride`-th entry.
    fn synthesize(&self, x: &mut [f64], stride: usize) {
        if self.n > 1 {
            x[(self.n - 1) * stride] += x[0];
        }
        for &(m, l, h, wl, wh) in &self.ops {
            x[m * stride] += wl * x[l * stride] + wh * x[h * stride];
        }
    }

    /// Transpose of [`Self::synthesize`], for gradients.
    fn transpose(&self, x: &mut [f64], stride: usize) {
        for &(m, l, h, wl, wh) in self.ops.iter().rev() {
            let g = x[m * stride];
            x[l * stride] += wl * g;
            x[h * stride] += wh * g;
        }
        if self.n > 1 {
            x[0] += x[(self.n - 1) * stride];
        }
    }
}

struct CostObjective<'a> {
    data: &'a CalibrationData,
    cfg: &'a CostConfig,
    basis: BridgeBasis,
}

impl CostObjective<'_> {
    fn bias_blocks(&self, x: &EstimationVariables) -> impl Iterator<Item = usize> {
        let (per, ob) = (x.imu_len(), x.params_len() + ANCHOR_DIM * x.imus.first().map_or(0, |v| v.anchors.len()));
        (0..x.imus.len()).map(move |i| i * per + ob)
    }
}

impl Objective for CostObjective<'_> {
    type Point = EstimationVariables;

    fn evaluate(&self, x: &EstimationVariables) -> Result<(f64, Vec<f64>)> {
        let (c, mut g) = evaluate_cost(x, self.data, self.cfg)?;
        for o in self.bias_blocks(x) {
            for comp in 0..BIAS_DIM {
                self.basis.transpose(&mut g[o + comp..], BIAS_DIM);
            }
        }
        Ok((c, g))
    }

    fn retract(&self, x: &EstimationVariables, step: &[f64]) -> EstimationVariables {
        let mut step = step.to_vec();
        for o in self.bias_blocks(x) {
            for comp in 0..BIAS_DIM {
                self.basis.synthesize(&mut step[o + comp..], BIAS_DIM);
            }
        }
        x.retract(&step)
    }

    fn step_scales(&self, x: &EstimationVariables) -> Vec<f64> {
        let mut s = x.step_scales(&self.cfg.step_scales);
        let walk: Vec<f64> = (0..BIAS_DIM)
            .map(|c| if c < 3 { self.cfg.sigma_bg[(c, c)] } else { self.cfg.sigma_ba[(c - 3, c - 3)] }.sqrt())
            .collect();
        let reference = self.cfg.optimizer.initial_step;
        for o in self.bias_blocks(x) {
            for (k, u) in self.basis.unit_std.iter().enumerate() {
                if let Some(u) = u {
                    for comp in 0..BIAS_DIM {
                        s[o + BIAS_DIM * k + comp] *= (walk[comp] * u / reference).min(1.0);
                    }
                }
            }
        }
        s
    }
}

/// Outcome of either stage.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub variables: EstimationVariables,
    pub calibration: Vec<ImuCalibration>,
    /// Rolled-out Master states per IMU.
    pub states: Vec<Vec<Pose>>,
    pub biases: Vec<Vec<BiasState>>,
    pub report: OptimizationReport,
    /// Set when the gyro record lacks rotation about some axis.
    pub excitation_warning: bool,
}

/// Minimum eigenvalue ratio of the gyro covariance below which Stage I warns.
pub const EXCITATION_FLOOR: f64 = 1e-2;

fn run_stage(vars: EstimationVariables, data: &CalibrationData, cfg: &CostConfig) -> Result<Estimate> {
    cfg.validate()?;
    let excitation = data.excitation();
    let excitation_warning = vars.stage == Stage::One && excitation < EXCITATION_FLOOR;
    if excitation_warning {
        log::warn!("weak rotational excitation (eigenvalue ratio {excitation:.2e}); calibration may be poorly identified");
    }
    let objective = CostObjective {
        data,
        cfg,
        basis: BridgeBasis::new(data.len()),
    };
    let (variables, report) = minimize(&objective, vars, &cfg.optimizer)?;
    if report.termination == Termination::Stalled {
        log::debug!("optimizer stalled after {} iterations", report.iterations);
    }
    let states = rollout_states(&variables, data, cfg)?;
    Ok(Estimate {
        calibration: variables.calibration(),
        biases: variables.bias_tracks(),
        states,
        variables,
        report,
        excitation_warning,
    })
}

/// Stage I: intrinsics, extrinsic rotations, states and biases from
/// identity parameters and the Master reference.
pub fn stage1_calibrate(data: &CalibrationData, cfg: &CostConfig) -> Result<Estimate> {
    let vars = EstimationVariables::initial(Stage::One, data, cfg.segment_len, None)?;
    run_stage(vars, data, cfg)
}

/// Stage II: states and biases with the calibration held fixed.
pub fn stage2_estimate(data: &CalibrationData, calibration: &[ImuCalibration], cfg: &CostConfig) -> Result<Estimate> {
    let vars = EstimationVariables::initial(Stage::Two, data, cfg.segment_len, Some(calibration))?;
    run_stage(vars, data, cfg)
}

pub const CALIBRATION_SCHEMA: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuCalibrationRecord {
    pub index: usize,
    pub c_g: [f64; 9],
    pub c_a: [f64; 9],
    pub r_mi: [f64; 9],
    /// `b_g` then `b_a`.
    pub bias: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetadata {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    pub excitation_warning: bool,
}

/// On-disk calibration document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: String,
    pub imus: Vec<ImuCalibrationRecord>,
    pub metadata: CalibrationMetadata,
}

impl CalibrationFile {
    pub fn from_estimate(est: &Estimate) -> Self {
        CalibrationFile {
            schema_version: CALIBRATION_SCHEMA.into(),
            imus: est
                .calibration
                .iter()
                .enumerate()
                .map(|(index, c)| {
                    let (g, a) = (c.final_bias.gyro, c.final_bias.accel);
                    ImuCalibrationRecord {
                        index,
                        c_g: crate::lie::row_major(&c.c_g),
                        c_a: crate::lie::row_major(&c.c_a),
                        r_mi: c.r_mi.to_row_major(),
                        bias: [g.x, g.y, g.z, a.x, a.y, a.z],
                    }
                })
                .collect(),
            metadata: CalibrationMetadata {
                iterations: est.report.iterations,
                initial_cost: est.report.initial_cost,
                final_cost: est.report.final_cost,
                termination: est.report.termination,
                excitation_warning: est.excitation_warning,
            },
        }
    }

    pub fn calibration(&self) -> Result<Vec<ImuCalibration>> {
        if self.schema_version != CALIBRATION_SCHEMA {
            return Err(Error::SchemaMismatch {
                found: self.schema_version.clone(),
                expected: CALIBRATION_SCHEMA.into(),
            });
        }
        self.imus
            .iter()
            .map(|r| {
                let c_g = Mat3::from_row_slice(&r.c_g);
                let c_a = Mat3::from_row_slice(&r.c_a);
                let check = ImuIntrinsics {
                    c_g,
                    c_a,
                    ..ImuIntrinsics::ideal()
                };
                check.validate()?;
                Ok(ImuCalibration {
                    c_g,
                    c_a,
                    r_mi: Rotation::try_from(r.r_mi)?,
                    final_bias: BiasState::new(Vec3::new(r.bias[0], r.bias[1], r.bias[2]), Vec3::new(r.bias[3], r.bias[4], r.bias[5])),
                })
            })
            .collect()
    }
}
