//! AVE and BAC fusion of several IMUs into one virtual IMU in the Master
//! frame, with the per-axis error bookkeeping that drives BAC selection.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_model::{BiasState, ImuSample};
use crate::kinematics::{angular_acceleration, inertial_acceleration, inertial_acceleration_master, ImuExtrinsics, Integrator, Pose, Trajectory};
use crate::lie::{log_so3, mat3_row_major, Mat3, Rotation, Vec3};

/// Default ceiling on the condition number of a composition matrix.
pub const CONDITION_CEILING: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Gyro,
    Accel,
}

impl SensorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SensorKind::Gyro => "gyro",
            SensorKind::Accel => "accel",
        }
    }
}

/// Bias-corrected, scale-corrected IMU-frame reading; `accel` is gravity
/// compensated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectedSample {
    pub omega: Vec3,
    pub accel: Vec3,
}

/// Fused rates in the Master frame; `accel` is gravity compensated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualMeasurement {
    pub t: f64,
    pub omega: Vec3,
    pub accel: Vec3,
}

/// Uniform average of the frame-transferred IMUs. `omega_dot` holds each
/// IMU's own angular acceleration, used for its inertial term.
pub fn ave_fuse(t: f64, samples: &[CorrectedSample], omega_dot: &[Vec3], extrinsics: &[ImuExtrinsics]) -> Result<VirtualMeasurement> {
    if samples.is_empty() {
        return Err(Error::EmptyImuSet);
    }
    if samples.len() != extrinsics.len() || samples.len() != omega_dot.len() {
        return Err(Error::Validation("ave_fuse inputs differ in length".into()));
    }
    let n = samples.len() as f64;
    let mut omega = Vec3::zeros();
    let mut accel = Vec3::zeros();
    for ((s, wd), ext) in samples.iter().zip(omega_dot).zip(extrinsics) {
        omega += ext.r_mi * s.omega;
        accel += ext.r_mi * (s.accel + inertial_acceleration(&s.omega, wd, &ext.p_im));
    }
    Ok(VirtualMeasurement {
        t,
        omega: omega / n,
        accel: accel / n,
    })
}

/// Per-IMU, per-axis errors over the last `p` IMU samples.
#[derive(Clone, Debug)]
pub struct AxisErrorWindow {
    p: usize,
    entries: Vec<VecDeque<(usize, Vec3)>>,
}

impl AxisErrorWindow {
    pub fn new(imus: usize, p: usize) -> Self {
        AxisErrorWindow {
            p: p.max(1),
            entries: vec![VecDeque::new(); imus],
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn imus(&self) -> usize {
        self.entries.len()
    }

    /// Records `error` of `imu` at sample `k`; entries at or before
    /// `k − p` are dropped.
    pub fn push(&mut self, imu: usize, k: usize, error: Vec3) -> Result<()> {
        let buf = self.entries.get_mut(imu).ok_or_else(|| Error::Validation(format!("no IMU {imu} in window")))?;
        if let Some(&(last, _)) = buf.back() {
            if k <= last {
                return Err(Error::Validation(format!("window entries must be time-ordered ({k} after {last})")));
            }
        }
        buf.push_back((k, error));
        while let Some(&(first, _)) = buf.front() {
            if first + self.p <= k {
                buf.pop_front();
            } else {
                break;
            }
        }
        Ok(())
    }

    pub fn len(&self, imu: usize) -> usize {
        self.entries[imu].len()
    }

    pub fn is_empty(&self, imu: usize) -> bool {
        self.entries[imu].is_empty()
    }

    /// Sum of squared errors per axis.
    pub fn sum_squares(&self, imu: usize) -> Result<Vec3> {
        let buf = &self.entries[imu];
        if buf.is_empty() {
            return Err(Error::EmptyWindow { imu });
        }
        Ok(buf.iter().fold(Vec3::zeros(), |acc, (_, e)| acc + e.component_mul(e)))
    }

    pub fn entries(&self, imu: usize) -> impl Iterator<Item = &(usize, Vec3)> {
        self.entries[imu].iter()
    }
}

/// Per Master axis, the candidate IMU with the smallest windowed sum of
/// squared errors. Ties go to the lower index.
pub fn select_best_axes(window: &AxisErrorWindow, candidates: &[usize]) -> Result<[usize; 3]> {
    if candidates.is_empty() {
        return Err(Error::EmptyImuSet);
    }
    let mut best = [(f64::INFINITY, usize::MAX); 3];
    for &i in candidates {
        if i >= window.imus() {
            return Err(Error::Validation(format!("candidate IMU {i} not in window")));
        }
        let s = window.sum_squares(i)?;
        for a in 0..3 {
            if s[a] < best[a].0 || (s[a] == best[a].0 && i < best[a].1) {
                best[a] = (s[a], i);
            }
        }
    }
    Ok([best[0].1, best[1].1, best[2].1])
}

/// Stacks axis `α` of `R_{I_i M}` for each selected `(i, α)` pair and
/// inverts. Returns the inverse and the condition number of the stack.
pub fn compose_matrix(rows: [(usize, usize); 3], extrinsics: &[ImuExtrinsics], ceiling: f64) -> Result<(Mat3, f64)> {
    let mut stack = Mat3::zeros();
    for (r, &(imu, axis)) in rows.iter().enumerate() {
        let ext = extrinsics.get(imu).ok_or_else(|| Error::Validation(format!("no extrinsics for IMU {imu}")))?;
        stack.set_row(r, &ext.r_im().matrix().row(axis));
    }
    let sv = stack.singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > ceiling {
        return Err(Error::NearCoplanar { condition, ceiling });
    }
    let inverse = stack.try_inverse().ok_or(Error::NearCoplanar {
        condition: f64::INFINITY,
        ceiling,
    })?;
    Ok((inverse, condition))
}

/// A frozen BAC axis choice with its composition matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSelection {
    pub kind: SensorKind,
    /// IMU index used for Master axes x, y, z.
    pub indices: [usize; 3],
    #[serde(with = "mat3_row_major")]
    pub matrix: Mat3,
    pub condition: f64,
    /// Windowed sum of squared errors per candidate IMU and axis.
    pub window_stats: Vec<(usize, [f64; 3])>,
}

impl AxisSelection {
    pub fn new(kind: SensorKind, indices: [usize; 3], extrinsics: &[ImuExtrinsics], ceiling: f64) -> Result<Self> {
        let (matrix, condition) = compose_matrix([(indices[0], 0), (indices[1], 1), (indices[2], 2)], extrinsics, ceiling)?;
        Ok(AxisSelection {
            kind,
            indices,
            matrix,
            condition,
            window_stats: Vec::new(),
        })
    }

    /// Selects from `window` over `candidates` and composes.
    pub fn from_window(kind: SensorKind, window: &AxisErrorWindow, candidates: &[usize], extrinsics: &[ImuExtrinsics], ceiling: f64) -> Result<Self> {
        let indices = select_best_axes(window, candidates)?;
        let mut sel = AxisSelection::new(kind, indices, extrinsics, ceiling)?;
        for &i in candidates {
            let s = window.sum_squares(i)?;
            sel.window_stats.push((i, [s.x, s.y, s.z]));
        }
        Ok(sel)
    }

    fn check(&self, kind: SensorKind, ceiling: f64) -> Result<()> {
        if self.kind != kind {
            return Err(Error::SelectionKind {
                expected: kind.as_str(),
                actual: self.kind.as_str(),
            });
        }
        if !(self.condition <= ceiling) {
            return Err(Error::StaleSelection {
                condition: self.condition,
                ceiling,
            });
        }
        Ok(())
    }

    fn stacked(&self, values: impl Fn(usize) -> Vec3) -> Vec3 {
        Vec3::new(values(self.indices[0]).x, values(self.indices[1]).y, values(self.indices[2]).z)
    }
}

/// BAC angular velocity in the Master frame from per-IMU corrected rates.
pub fn bac_gyro(selection: &AxisSelection, omegas: &[Vec3], ceiling: f64) -> Result<Vec3> {
    selection.check(SensorKind::Gyro, ceiling)?;
    Ok(selection.matrix * selection.stacked(|i| omegas[i]))
}

/// BAC acceleration in the Master frame. Each IMU's inertial term uses the
/// fused Master-frame rates.
pub fn bac_accel(
    selection: &AxisSelection,
    accels: &[Vec3],
    omega_m: &Vec3,
    omega_dot_m: &Vec3,
    extrinsics: &[ImuExtrinsics],
    ceiling: f64,
) -> Result<Vec3> {
    selection.check(SensorKind::Accel, ceiling)?;
    Ok(selection.matrix * selection.stacked(|i| accels[i] + inertial_acceleration_master(omega_m, omega_dot_m, &extrinsics[i])))
}

/// Orientation error of every IMU's Master estimate, in that IMU's frame.
pub fn gyro_axis_errors(gt: &Rotation, est: &[Rotation], extrinsics: &[ImuExtrinsics]) -> Vec<Vec3> {
    est.iter()
        .zip(extrinsics)
        .map(|(r, ext)| log_so3(&(ext.r_im() * gt.transpose() * *r * ext.r_mi)).0)
        .collect()
}

/// Position error `R_IM·(R_MW^BAC·p_WM − R_MW^GT·p_WM^GT)` per IMU, where
/// `positions[i]` is the Master position integrated from IMU `i`'s
/// accelerometer with the BAC orientation `r_bac`.
pub fn accel_axis_errors(gt: &Pose, r_bac: &Rotation, positions: &[Vec3], extrinsics: &[ImuExtrinsics]) -> Vec<Vec3> {
    let gt_term = gt.r.transpose() * gt.p;
    positions
        .iter()
        .zip(extrinsics)
        .map(|(p, ext)| ext.r_im() * (r_bac.transpose() * p - gt_term))
        .collect()
}

/// Everything needed to turn raw readings of one IMU into corrected ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    pub c_g: Mat3,
    pub c_a: Mat3,
    pub extrinsics: ImuExtrinsics,
    pub bias: BiasState,
}

impl SensorModel {
    /// Corrected reading given the current Master orientation.
    pub fn correct(&self, s: &ImuSample, r_wm: &Rotation, gravity: &Vec3) -> CorrectedSample {
        let r_iw = (r_wm * self.extrinsics.r_mi).transpose();
        CorrectedSample {
            omega: self.c_g * s.gyro - self.bias.gyro,
            accel: self.c_a * s.accel - self.bias.accel + r_iw * gravity,
        }
    }
}

/// How the open loop fuses the IMUs.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum FusionMode {
    /// Average over the listed IMUs (one IMU gives the single-sensor case).
    Ave(Vec<usize>),
    Bac { gyro: AxisSelection, accel: AxisSelection },
}

/// Dead reckoning from `initial` through `streams` (all on one grid,
/// starting at the initial time) with frozen biases. `prior` holds the
/// sample before the first one of each stream, if any, for the angular
/// acceleration at the first step.
pub fn run_open_loop(
    initial: &Pose,
    streams: &[&[ImuSample]],
    prior: Option<&[ImuSample]>,
    models: &[SensorModel],
    mode: &FusionMode,
    gravity: &Vec3,
    ceiling: f64,
) -> Result<Trajectory> {
    if streams.is_empty() || streams.len() != models.len() {
        return Err(Error::EmptyImuSet);
    }
    let n = streams[0].len();
    if streams.iter().any(|s| s.len() != n) || n == 0 {
        return Err(Error::GridMismatch("open-loop streams differ in length".into()));
    }
    let extrinsics: Vec<ImuExtrinsics> = models.iter().map(|m| m.extrinsics).collect();
    let used: Vec<usize> = match mode {
        FusionMode::Ave(imus) => imus.clone(),
        FusionMode::Bac { gyro, accel } => {
            let mut u: Vec<usize> = gyro.indices.iter().chain(&accel.indices).copied().collect();
            u.sort_unstable();
            u.dedup();
            u
        }
    };
    if used.is_empty() || used.iter().any(|&i| i >= models.len()) {
        return Err(Error::Validation(format!("fusion uses IMUs {used:?} of {}", models.len())));
    }
    let used_ext: Vec<ImuExtrinsics> = used.iter().map(|&i| extrinsics[i]).collect();

    let mut integrator = Integrator::new(*initial);
    let mut poses = Vec::with_capacity(n);
    poses.push(*initial);
    let mut prev_omega: Vec<Option<Vec3>> = vec![None; models.len()];
    let mut prev_fused: Option<Vec3> = None;
    let mut prev_t: Option<f64> = None;
    if let Some(prior) = prior {
        let r = initial.r;
        for &i in &used {
            prev_omega[i] = Some(models[i].correct(&prior[i], &r, gravity).omega);
        }
        if let FusionMode::Bac { gyro, .. } = mode {
            let omegas: Vec<Vec3> = (0..models.len()).map(|i| prev_omega[i].unwrap_or_default()).collect();
            prev_fused = Some(bac_gyro(gyro, &omegas, ceiling)?);
        }
        prev_t = Some(prior[used[0]].t);
    }

    let mut corrected = vec![CorrectedSample { omega: Vec3::zeros(), accel: Vec3::zeros() }; models.len()];
    for k in 0..n.saturating_sub(1) {
        let t = streams[0][k].t;
        let dt = streams[0][k + 1].t - t;
        let dt_prev = prev_t.map_or(dt, |p| t - p);
        let r = integrator.state.r;
        for &i in &used {
            corrected[i] = models[i].correct(&streams[i][k], &r, gravity);
        }
        let (omega, accel) = match mode {
            FusionMode::Ave(_) => {
                let mut wd = Vec::with_capacity(used.len());
                for &i in &used {
                    wd.push(angular_acceleration(&corrected[i].omega, prev_omega[i].as_ref(), dt_prev)?);
                    prev_omega[i] = Some(corrected[i].omega);
                }
                let samples: Vec<CorrectedSample> = used.iter().map(|&i| corrected[i]).collect();
                let v = ave_fuse(t, &samples, &wd, &used_ext)?;
                (v.omega, v.accel)
            }
            FusionMode::Bac { gyro, accel } => {
                let omegas: Vec<Vec3> = corrected.iter().map(|c| c.omega).collect();
                let w = bac_gyro(gyro, &omegas, ceiling)?;
                let wd = angular_acceleration(&w, prev_fused.as_ref(), dt_prev)?;
                prev_fused = Some(w);
                let accels: Vec<Vec3> = corrected.iter().map(|c| c.accel).collect();
                (w, bac_accel(accel, &accels, &w, &wd, &extrinsics, ceiling)?)
            }
        };
        prev_t = Some(t);
        let mut next = *integrator.step(&omega, &accel, dt)?;
        next.t = streams[0][k + 1].t;
        integrator.state.t = next.t;
        poses.push(next);
    }
    Trajectory::new(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_so3, AxisAngle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn rotated_rig(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<ImuExtrinsics> {
        (0..n).map(|_| ImuExtrinsics::new(exp_so3(&AxisAngle(rv(rng, spread))), rv(rng, 0.05))).collect()
    }

    #[test]
    fn ave_single_passthrough_and_symmetry() {
        let s = CorrectedSample {
            omega: Vec3::new(0.1, -0.2, 0.3),
            accel: Vec3::new(1.0, 2.0, -3.0),
        };
        let id = ImuExtrinsics::default();
        let v = ave_fuse(0.0, &[s], &[Vec3::zeros()], std::slice::from_ref(&id)).unwrap();
        assert_eq!((v.omega, v.accel), (s.omega, s.accel));
        let neg = CorrectedSample {
            omega: -s.omega,
            accel: -s.accel,
        };
        let v = ave_fuse(0.0, &[s, neg], &[Vec3::zeros(); 2], &[id, id]).unwrap();
        assert_eq!((v.omega, v.accel), (Vec3::zeros(), Vec3::zeros()));
        assert!(matches!(ave_fuse(0.0, &[], &[], &[]), Err(Error::EmptyImuSet)));
    }

    #[test]
    fn gyro_errors_first_order_and_world_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ext = rotated_rig(&mut rng, 3, 0.5);
        let gt = exp_so3(&AxisAngle(rv(&mut rng, 2.0)));
        assert!(gyro_axis_errors(&gt, &[gt; 3], &ext).iter().all(|e| e.norm() < 1e-15));
        let delta = Vec3::new(1e-4, -2e-4, 1.5e-4);
        let est: Vec<Rotation> = ext.iter().map(|e| gt * exp_so3(&AxisAngle(e.r_mi * delta))).collect();
        for e in gyro_axis_errors(&gt, &est, &ext) {
            assert!((e - delta).norm() < 1e-7);
        }
        let world = exp_so3(&AxisAngle(rv(&mut rng, 2.0)));
        let a = gyro_axis_errors(&gt, &est, &ext);
        let moved: Vec<Rotation> = est.iter().map(|r| world * *r).collect();
        let b = gyro_axis_errors(&(world * gt), &moved, &ext);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn accel_errors_hand_evaluated() {
        let ext = vec![ImuExtrinsics::default(), ImuExtrinsics::new(exp_so3(&AxisAngle(Vec3::new(0.0, 0.0, 0.1))), Vec3::zeros())];
        let gt = Pose::new(Rotation::identity(), Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), 0.0);
        let zero = accel_axis_errors(&gt, &Rotation::identity(), &[gt.p, gt.p], &ext);
        assert!(zero.iter().all(|e| e.norm() == 0.0));
        let d = 0.01;
        let p = gt.p + Vec3::new(d, 0.0, 0.0);
        let e = accel_axis_errors(&gt, &Rotation::identity(), &[p, p], &ext);
        assert!((e[0] - Vec3::new(d, 0.0, 0.0)).norm() < 1e-15);
        assert!((e[1] - ext[1].r_im() * Vec3::new(d, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn selection_single_imu_and_brute_force() {
        let mut w = AxisErrorWindow::new(1, 5);
        w.push(0, 0, Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(select_best_axes(&w, &[0]).unwrap(), [0, 0, 0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut w = AxisErrorWindow::new(3, 5);
            let mut all = vec![Vec::new(); 3];
            for k in 0..8 {
                for (i, errs) in all.iter_mut().enumerate() {
                    let e = rv(&mut rng, 1.0);
                    w.push(i, k, e).unwrap();
                    errs.push(e);
                }
            }
            let got = select_best_axes(&w, &[0, 1, 2]).unwrap();
            for a in 0..3 {
                let sums: Vec<f64> = all.iter().map(|errs| errs[3..].iter().map(|e| e[a] * e[a]).sum()).collect();
                let best = (0..3).min_by(|&x, &y| sums[x].partial_cmp(&sums[y]).unwrap()).unwrap();
                assert_eq!(got[a], best);
            }
            for i in 0..3 {
                assert_eq!(w.len(i), 5);
            }
        }
    }

    #[test]
    fn selection_ties_and_scale_invariance() {
        let mut w = AxisErrorWindow::new(3, 10);
        for i in 0..3 {
            w.push(i, 0, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        }
        assert_eq!(select_best_axes(&w, &[2, 1, 0]).unwrap(), [0, 0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let errs: Vec<Vec<Vec3>> = (0..3).map(|_| (0..6).map(|_| rv(&mut rng, 1.0)).collect()).collect();
        let build = |scale: f64| {
            let mut w = AxisErrorWindow::new(3, 10);
            for (i, es) in errs.iter().enumerate() {
                for (k, e) in es.iter().enumerate() {
                    w.push(i, k, e * scale).unwrap();
                }
            }
            select_best_axes(&w, &[0, 1, 2]).unwrap()
        };
        assert_eq!(build(1.0), build(37.5));
        let empty = AxisErrorWindow::new(2, 4);
        assert!(matches!(select_best_axes(&empty, &[0, 1]), Err(Error::EmptyWindow { imu: 0 })));
    }

    #[test]
    fn composition_is_exact_inverse() {
        let id = vec![ImuExtrinsics::default(); 3];
        let (m, c) = compose_matrix([(0, 0), (1, 1), (2, 2)], &id, CONDITION_CEILING).unwrap();
        assert_eq!(m, Mat3::identity());
        assert_eq!(c, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let ext = rotated_rig(&mut rng, 3, 0.6);
            let sel = AxisSelection::new(SensorKind::Gyro, [rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..3)], &ext, CONDITION_CEILING).unwrap();
            let w_m = rv(&mut rng, 3.0);
            let omegas: Vec<Vec3> = ext.iter().map(|e| e.r_im() * w_m).collect();
            assert!((bac_gyro(&sel, &omegas, CONDITION_CEILING).unwrap() - w_m).norm() < 1e-12);
        }
    }

    #[test]
    fn coplanar_axes_are_rejected() {
        let quarter = exp_so3(&AxisAngle(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)));
        let ext = vec![ImuExtrinsics::default(), ImuExtrinsics::new(quarter, Vec3::zeros())];
        assert!(matches!(compose_matrix([(0, 0), (1, 1), (0, 2)], &ext, CONDITION_CEILING), Err(Error::NearCoplanar { .. })));
    }

    #[test]
    fn bac_accel_recovers_master_acceleration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let ext = rotated_rig(&mut rng, 3, 0.1);
            let (w, wd, a_m) = (rv(&mut rng, 3.0), rv(&mut rng, 10.0), rv(&mut rng, 5.0));
            // Forward: a_I = R_IM·a_M − inertial(ω_I, ω̇_I, p_IM).
            let accels: Vec<Vec3> = ext
                .iter()
                .map(|e| e.r_im() * a_m - inertial_acceleration(&(e.r_im() * w), &(e.r_im() * wd), &e.p_im))
                .collect();
            let idx = [rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..3)];
            let sel = AxisSelection::new(SensorKind::Accel, idx, &ext, CONDITION_CEILING).unwrap();
            let got = bac_accel(&sel, &accels, &w, &wd, &ext, CONDITION_CEILING).unwrap();
            assert!((got - a_m).norm() < 1e-10);
        }
    }

    #[test]
    fn selection_kind_and_staleness() {
        let ext = vec![ImuExtrinsics::default()];
        let sel = AxisSelection::new(SensorKind::Accel, [0, 0, 0], &ext, CONDITION_CEILING).unwrap();
        assert!(matches!(bac_gyro(&sel, &[Vec3::zeros()], CONDITION_CEILING), Err(Error::SelectionKind { .. })));
        let mut stale = AxisSelection::new(SensorKind::Gyro, [0, 0, 0], &ext, CONDITION_CEILING).unwrap();
        stale.condition = 1e9;
        assert!(matches!(bac_gyro(&stale, &[Vec3::zeros()], CONDITION_CEILING), Err(Error::StaleSelection { .. })));
    }

    #[test]
    fn window_drops_old_entries() {
        let mut w = AxisErrorWindow::new(1, 3);
        for k in [0, 1, 2, 3, 7] {
            w.push(0, k, Vec3::repeat(k as f64)).unwrap();
        }
        assert_eq!(w.entries(0).map(|e| e.0).collect::<Vec<_>>(), vec![7]);
        assert!(w.push(0, 7, Vec3::zeros()).is_err());
    }
}
