//! Interpolation helpers: natural cubic splines for vector signals and a
//! tangent-space cubic for rotation sequences.

use crate::error::{Error, Result};
use crate::lie::{exp_so3, log_so3, AxisAngle, Rotation, Vec3};

/// Natural cubic spline through 3-vector knots.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    times: Vec<f64>,
    values: Vec<Vec3>,
    /// Second derivatives at the knots.
    curvature: Vec<Vec3>,
}

/// Value and first two derivatives of a spline at one instant.
#[derive(Clone, Copy, Debug)]
pub struct SplinePoint {
    pub value: Vec3,
    pub d1: Vec3,
    pub d2: Vec3,
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<()> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotonicTimestamps {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    Ok(())
}

impl CubicSpline {
    pub fn natural(times: Vec<f64>, values: Vec<Vec3>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Validation(format!(
                "spline needs >= 2 knots with matching values ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        check_increasing(&times)?;
        let n = times.len();
        let mut curvature = vec![Vec3::zeros(); n];
        if n > 2 {
            // Thomas algorithm on the interior rows, natural end conditions.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![Vec3::zeros(); m];
            for i in 0..m {
                let h0 = times[i + 1] - times[i];
                let h1 = times[i + 2] - times[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
            }
            for i in 1..m {
                let lower = times[i + 1] - times[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                let prev = rhs[i - 1];
                rhs[i] -= w * prev;
            }
            let mut sol = vec![Vec3::zeros(); m];
            sol[m - 1] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            curvature[1..n - 1].copy_from_slice(&sol);
        }
        Ok(CubicSpline {
            times,
            values,
            curvature,
        })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Evaluates the spline; outside the knot range the end pieces are
    /// extended.
    pub fn eval(&self, t: f64) -> SplinePoint {
        let i = segment_index(&self.times, t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.curvature[i], self.curvature[i + 1]);
        let a = (t1 - t) / h;
        let b = (t - t0) / h;
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * (h * h / 6.0);
        let d1 = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * (h / 6.0);
        let d2 = a * m0 + b * m1;
        SplinePoint { value, d1, d2 }
    }
}

/// Index `i` of the knot interval `[times[i], times[i+1]]` holding `t`,
/// clamped to the first/last interval.
pub(crate) fn segment_index(times: &[f64], t: f64) -> usize {
    let n = times.len();
    match times.binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
        Ok(i) => i.min(n - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(n - 2),
    }
}

/// C¹ interpolation of a rotation sequence: on each interval a Catmull-Rom
/// cubic is built in the tangent space of the interval's first knot.
#[derive(Clone, Debug)]
pub struct RotationSpline {
    times: Vec<f64>,
    rotations: Vec<Rotation>,
}

impl RotationSpline {
    pub fn new(times: Vec<f64>, rotations: Vec<Rotation>) -> Result<Self> {
        if times.len() != rotations.len() || times.len() < 2 {
            return Err(Error::Validation("rotation spline needs >= 2 matching knots".into()));
        }
        check_increasing(&times)?;
        Ok(RotationSpline { times, rotations })
    }

    pub fn eval(&self, t: f64) -> Rotation {
        let n = self.times.len();
        let i = segment_index(&self.times, t);
        let base = self.rotations[i];
        let local = |j: usize| log_so3(&(base.transpose() * self.rotations[j])).0;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let p1 = local(i + 1);
        // Tangents by finite differences over neighbouring knots.
        let m0 = if i > 0 {
            (p1 - local(i - 1)) / (t1 - self.times[i - 1])
        } else {
            p1 / (t1 - t0)
        };
        let m1 = if i + 2 < n {
            local(i + 2) / (self.times[i + 2] - t0)
        } else {
            p1 / (t1 - t0)
        };
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let xi = h10 * h * m0 + h01 * p1 + h11 * h * m1;
        base * exp_so3(&AxisAngle(xi))
    }
}
