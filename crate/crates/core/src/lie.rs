//! SO(3) primitives.
//!
//! Rotations are kept as full direction-cosine matrices: the fusion code
//! extracts individual matrix rows, so a quaternion representation would only
//! add conversions. `R_target_origin` maps coordinates from the origin frame to
//! the target frame.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle exp/log switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Composed integration steps between two polar renormalizations.
pub const RENORMALIZE_EVERY: usize = 1000;

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation(Mat3);

/// A rotation vector (axis times angle, radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub Vec3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix that the caller knows is orthonormal.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Accepts `m` when it is orthonormal with unit determinant to within `tol`
    /// per entry.
    pub fn try_from_matrix(m: Mat3, tol: f64) -> Result<Self> {
        let residual = m * m.transpose() - Mat3::identity();
        let det = m.determinant();
        if residual.amax() > tol || (det - 1.0).abs() > tol || !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation(format!(
                "matrix is not a rotation (orthonormality residual {:.3e}, det {det})",
                residual.amax()
            )));
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn nearest(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }

    pub fn renormalized(&self) -> Self {
        Self::nearest(&self.0)
    }

    pub fn from_row_major(entries: &[f64; 9]) -> Self {
        Rotation(Mat3::from_row_slice(entries))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        row_major(&self.0)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn exp(theta: &AxisAngle) -> Self {
        exp_so3(theta)
    }

    pub fn log(&self) -> AxisAngle {
        log_so3(self)
    }

    /// Rotation by `angle` radians about the (not necessarily unit) `axis`.
    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        exp_so3(&AxisAngle(axis.normalize() * angle))
    }

    /// Row `i` of the matrix as a column vector.
    pub fn row(&self, i: usize) -> Vec3 {
        self.0.row(i).transpose()
    }

    pub fn angle(&self) -> f64 {
        log_so3(self).angle()
    }

    /// Largest per-entry deviation of R·Rᵀ from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).amax()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl From<Rotation> for [f64; 9] {
    fn from(r: Rotation) -> Self {
        r.to_row_major()
    }
}

impl TryFrom<[f64; 9]> for Rotation {
    type Error = Error;
    fn try_from(entries: [f64; 9]) -> Result<Self> {
        Rotation::try_from_matrix(Mat3::from_row_slice(&entries), 1e-6)
    }
}

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vec3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }
}

pub fn row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

/// Serde adapter writing a 3×3 matrix as nine row-major floats.
pub mod mat3_row_major {
    use super::Mat3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        super::row_major(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let entries = <[f64; 9]>::deserialize(d)?;
        Ok(Mat3::from_row_slice(&entries))
    }
}

/// Skew-symmetric matrix with `hat(v) * w == v.cross(w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] (reads the skew part only).
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

pub fn exp_so3(theta: &AxisAngle) -> Rotation {
    let v = theta.0;
    let angle = v.norm();
    let k = hat(&v);
    let k2 = k * k;
    if angle < SMALL_ANGLE {
        return Rotation(Mat3::identity() + k + 0.5 * k2);
    }
    let (s, c) = angle.sin_cos();
    Rotation(Mat3::identity() + (s / angle) * k + ((1.0 - c) / (angle * angle)) * k2)
}

pub fn log_so3(r: &Rotation) -> AxisAngle {
    let m = &r.0;
    let skew = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin_angle = 0.5 * skew.norm();
    let cos_angle = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let angle = sin_angle.atan2(cos_angle);

    if angle < SMALL_ANGLE {
        // angle/(2 sin angle) = 1/2 + angle²/12 + ...
        return AxisAngle(skew * (0.5 + angle * angle / 12.0));
    }
    if cos_angle > -0.99 {
        return AxisAngle(skew * (angle / (2.0 * sin_angle)));
    }

    // Near pi the skew part vanishes; recover the axis from the symmetric part
    // (R + Rᵀ)/2 - cos·I = (1 - cos)·n·nᵀ using its largest diagonal entry.
    let sym = 0.5 * (m + m.transpose()) - cos_angle * Mat3::identity();
    let mut pivot = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(pivot, pivot)] {
            pivot = i;
        }
    }
    let axis: Vec3 = sym.column(pivot).normalize();

    let direction = axis.dot(&skew);
    let axis = if direction.abs() > 1e-12 {
        if direction < 0.0 {
            -axis
        } else {
            axis
        }
    } else {
        canonical_sign(axis)
    };
    AxisAngle(axis * angle)
}

/// Flips `v` so that its first component that is not ~0 is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Right Jacobian of SO(3): Exp(θ + δ) ≈ Exp(θ)·Exp(Jr(θ)·δ).
pub fn right_jacobian(theta: &Vec3) -> Mat3 {
    let angle = theta.norm();
    let k = hat(theta);
    let (a, b) = if angle < 1e-4 {
        let a2 = angle * angle;
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else {
        let a2 = angle * angle;
        ((1.0 - angle.cos()) / a2, (angle - angle.sin()) / (a2 * angle))
    };
    Mat3::identity() - a * k + b * k * k
}

/// Inverse of [`right_jacobian`]: Log(Exp(θ)·Exp(δ)) ≈ θ + Jr⁻¹(θ)·δ.
pub fn right_jacobian_inv(theta: &Vec3) -> Mat3 {
    let angle = theta.norm();
    let k = hat(theta);
    let c = if angle < 1e-4 {
        1.0 / 12.0 + angle * angle / 720.0
    } else {
        1.0 / (angle * angle) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin())
    };
    Mat3::identity() + 0.5 * k + c * k * k
}

/// Angle of the relative rotation aᵀ·b.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    log_so3(&(a.transpose() * *b)).angle()
}

/// Geodesic interpolation, `s = 0` gives `a`, `s = 1` gives `b`.
pub fn slerp(a: &Rotation, b: &Rotation, s: f64) -> Rotation {
    let delta = log_so3(&(a.transpose() * *b));
    *a * exp_so3(&AxisAngle(delta.0 * s))
}

/// Riemannian (Karcher) mean of rotations under the bi-invariant metric.
pub fn rotation_mean(rotations: &[Rotation]) -> Result<Rotation> {
    let first = rotations.first().ok_or(Error::EmptyImuSet)?;
    for (i, a) in rotations.iter().enumerate() {
        for b in &rotations[i + 1..] {
            let distance = geodesic_distance(a, b);
            if distance >= FRAC_PI_2 {
                return Err(Error::DispersionTooLarge { distance });
            }
        }
    }

    let n = rotations.len() as f64;
    let mut mean = *first;
    for _ in 0..100 {
        let mut step = Vec3::zeros();
        for r in rotations {
            step += log_so3(&(mean.transpose() * *r)).0;
        }
        step /= n;
        mean = (mean * exp_so3(&AxisAngle(step))).renormalized();
        if step.norm() < 1e-14 {
            break;
        }
    }
    Ok(mean)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}
