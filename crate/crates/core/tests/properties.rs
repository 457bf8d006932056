//! Property tests for the model invariants, plus statistical checks on the
//! noise and bias-walk generators.

use bac_core::fusion::{bac_gyro, select_best_axes, AxisErrorWindow, AxisSelection, SensorKind, CONDITION_CEILING};
use bac_core::imu_model::{correct, propagate_bias, simulate_measurement, BiasWalkStreams, NoiseStreams, TrueMotion};
use bac_core::lie::{exp_so3, geodesic_distance, log_so3};
use bac_core::{AxisAngle, BiasState, ImuExtrinsics, ImuIntrinsics, Mat3, Rotation, SystematicErrorSpec, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    proptest::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn rotation(max_angle: f64) -> impl Strategy<Value = Rotation> {
    (proptest::array::uniform3(-1.0..1.0f64), 0.0..max_angle).prop_map(|(axis, angle)| {
        let axis = Vec3::from(axis);
        let n = axis.norm();
        if n < 1e-6 {
            Rotation::identity()
        } else {
            exp_so3(&AxisAngle(axis / n * angle))
        }
    })
}

fn lower_triangular() -> impl Strategy<Value = Mat3> {
    (proptest::array::uniform3(0.9..1.1f64), proptest::array::uniform3(-0.05..0.05f64))
        .prop_map(|(d, o)| Mat3::new(d[0], 0.0, 0.0, o[0], d[1], 0.0, o[1], o[2], d[2]))
}

proptest! {
    #[test]
    fn correction_inverts_noiseless_measurement(
        c_g in lower_triangular(),
        c_a in lower_triangular(),
        b_g in vec3(0.05),
        b_a in vec3(0.2),
        omega in vec3(5.0),
        accel in vec3(20.0),
        r_wi in rotation(3.1),
    ) {
        let intr = ImuIntrinsics { c_g, c_a, ..ImuIntrinsics::ideal() };
        let bias = BiasState::new(b_g, b_a);
        let gravity = bac_core::imu_model::default_gravity();
        let motion = TrueMotion { omega, accel_world: accel, r_wi };
        let mut noise = NoiseStreams::new(1, 0);
        let s = simulate_measurement(0, 0.0, 1.0 / 342.0, &motion, &intr, &bias, &SystematicErrorSpec::default(), &gravity, &mut noise).unwrap();
        let (w, a) = correct(&s, &intr, &bias, &r_wi.transpose(), &gravity).unwrap();
        prop_assert!((w - omega).norm() < 1e-10);
        prop_assert!((a - r_wi.transpose() * accel).norm() < 1e-10);
    }

    #[test]
    fn log_inverts_exp_below_pi(theta in vec3(1.8)) {
        prop_assume!(theta.norm() < std::f64::consts::PI - 1e-6);
        let r = exp_so3(&AxisAngle(theta));
        prop_assert!((log_so3(&r).0 - theta).norm() < 1e-9);
        prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugation_rotates_the_axis(r in rotation(3.1), theta in vec3(1.5)) {
        let lhs = r * exp_so3(&AxisAngle(theta)) * r.transpose();
        let rhs = exp_so3(&AxisAngle(r * theta));
        prop_assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn geodesic_distance_is_symmetric_and_invariant(a in rotation(3.0), b in rotation(3.0), c in rotation(3.0)) {
        let d = geodesic_distance(&a, &b);
        prop_assert!((d - geodesic_distance(&b, &a)).abs() < 1e-9);
        prop_assert!((d - geodesic_distance(&(c * a), &(c * b))).abs() < 1e-9);
    }

    #[test]
    fn composition_is_exact_for_any_selection(
        rs in proptest::array::uniform3(rotation(0.35)),
        indices in proptest::array::uniform3(0usize..3),
        omega_m in vec3(5.0),
    ) {
        let ext: Vec<ImuExtrinsics> = rs.iter().map(|r| ImuExtrinsics::new(*r, Vec3::zeros())).collect();
        let omegas: Vec<Vec3> = ext.iter().map(|e| e.r_im() * omega_m).collect();
        let sel = AxisSelection::new(SensorKind::Gyro, indices, &ext, CONDITION_CEILING).unwrap();
        let w = bac_gyro(&sel, &omegas, CONDITION_CEILING).unwrap();
        prop_assert!((w - omega_m).norm() < 1e-10 * (1.0 + omega_m.norm()));
    }

    #[test]
    fn selection_is_argmin_and_scale_invariant(
        errors in proptest::collection::vec(proptest::collection::vec(vec3(1.0), 1..20), 1..5),
        scale in 1e-3..1e3f64,
    ) {
        let imus = errors.len();
        let fill = |s: f64| {
            let mut w = AxisErrorWindow::new(imus, 64);
            for (i, es) in errors.iter().enumerate() {
                for (k, e) in es.iter().enumerate() {
                    w.push(i, k, e * s).unwrap();
                }
            }
            w
        };
        let candidates: Vec<usize> = (0..imus).collect();
        let w = fill(1.0);
        let sel = select_best_axes(&w, &candidates).unwrap();
        for axis in 0..3 {
            let best = w.sum_squares(sel[axis]).unwrap()[axis];
            for &i in &candidates {
                prop_assert!(best <= w.sum_squares(i).unwrap()[axis]);
            }
        }
        let scaled = select_best_axes(&fill(scale), &candidates).unwrap();
        for axis in 0..3 {
            // Rounding can only reorder exact ties.
            let a = w.sum_squares(sel[axis]).unwrap()[axis];
            let b = w.sum_squares(scaled[axis]).unwrap()[axis];
            prop_assert!(scaled[axis] == sel[axis] || (a - b).abs() <= 1e-12 * a.max(b));
        }
    }
}

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}

#[test]
fn measurement_noise_is_white_and_streams_are_independent() {
    let n = 20_000;
    let dt = 1.0 / 342.0;
    let intr = ImuIntrinsics::default();
    let gravity = bac_core::imu_model::default_gravity();
    let motion = TrueMotion {
        omega: Vec3::zeros(),
        accel_world: Vec3::zeros(),
        r_wi: Rotation::identity(),
    };
    let draw = |imu: u32| {
        let mut noise = NoiseStreams::new(9, imu);
        (0..n)
            .map(|k| {
                simulate_measurement(imu as usize, k as f64 * dt, dt, &motion, &intr, &BiasState::default(), &SystematicErrorSpec::default(), &gravity, &mut noise)
                    .unwrap()
                    .gyro
            })
            .collect::<Vec<_>>()
    };
    let a = draw(0);
    let b = draw(1);
    let bound = 3.0 / (n as f64).sqrt();
    for axis in 0..3 {
        let x: Vec<f64> = a.iter().map(|v| v[axis]).collect();
        for lag in 1..=10 {
            let r = autocorrelation(&x, lag);
            assert!(r.abs() < bound, "axis {axis} lag {lag}: {r}");
        }
        let std = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let expected = intr.gyro_noise_density / dt.sqrt();
        assert!((std / expected - 1.0).abs() < 0.03, "std {std} vs {expected}");
    }
    let cross: f64 = a.iter().zip(&b).map(|(u, v)| u.x * v.x).sum::<f64>();
    let norm = (a.iter().map(|u| u.x * u.x).sum::<f64>() * b.iter().map(|v| v.x * v.x).sum::<f64>()).sqrt();
    assert!((cross / norm).abs() < bound);
}

#[test]
fn random_walk_increments_are_independent() {
    let n = 20_000;
    let dt = 1.0 / 342.0;
    let intr = ImuIntrinsics {
        gyro_bias_walk: 1e-3,
        ..ImuIntrinsics::default()
    };
    let mut walk = BiasWalkStreams::new(3, 0);
    let mut bias = BiasState::default();
    let mut increments = Vec::with_capacity(n);
    for _ in 0..n {
        let next = propagate_bias(&bias, &intr, dt, &mut walk).unwrap();
        increments.push((next.gyro - bias.gyro).x);
        bias = next;
    }
    let bound = 3.0 / (n as f64).sqrt();
    for lag in 1..=10 {
        assert!(autocorrelation(&increments, lag).abs() < bound);
    }
    let var = increments.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let expected = intr.gyro_bias_walk.powi(2) * dt;
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
}
