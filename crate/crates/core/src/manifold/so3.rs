//! The rotation group SO(3): Rodrigues exponential, trace-guarded logarithm,
//! and their left translates.
//!
//! Tangent vectors at `p` are stored as ambient 3x3 matrices `p * [w]x`. Their
//! Frobenius norm is `sqrt(2)` times the axis-angle norm `|w|`; see
//! [`FROBENIUS_PER_AXIS_ANGLE`]. Geodesic distances reported by this module are
//! rotation angles, i.e. axis-angle norms.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Logarithm guard: rotations with `tr(R) <= -1 + SO3_TRACE_TOL` are rejected.
pub const SO3_TRACE_TOL: f64 = 1e-7;
/// Angles at or below this use second-order Taylor factors.
pub const SMALL_ANGLE: f64 = 1e-7;
/// `|p [w]x|_F = FROBENIUS_PER_AXIS_ANGLE * |w|`. The one conversion between
/// the ambient (Frobenius) tangent norm and the axis-angle norm.
pub const FROBENIUS_PER_AXIS_ANGLE: f64 = SQRT_2;

/// Skew-symmetric matrix `[w]x` with `[w]x v = w x v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] on the skew part: `((M32 - M23), (M13 - M31), (M21 - M12)) / 2`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    mat: Matrix3<f64>,
}

impl Rotation {
    pub const ORTHOGONALITY_TOL: f64 = 1e-10;

    pub fn identity() -> Self {
        Self {
            mat: Matrix3::identity(),
        }
    }

    /// Checks orthogonality and unit determinant to 1e-10.
    pub fn new(mat: Matrix3<f64>) -> Result<Self> {
        let r = Self { mat };
        let (orth, det) = r.invariant_errors();
        if orth > Self::ORTHOGONALITY_TOL || (det - 1.0).abs() > Self::ORTHOGONALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: |R^T R - I|_F = {orth:e}, det = {det}"
            )));
        }
        Ok(r)
    }

    pub(crate) fn from_matrix_unchecked(mat: Matrix3<f64>) -> Self {
        Self { mat }
    }

    /// From a (not necessarily normalized) quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 1e-12) {
            return Err(Error::InvalidArgument("zero quaternion".into()));
        }
        let [w, x, y, z] = q.map(|v| v / n);
        let mat = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        Ok(Self { mat })
    }

    /// Row-major 9-vector, as persisted in sample files.
    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "rotation needs 9 entries, got {}",
                v.len()
            )));
        }
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.mat;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.mat
    }

    pub fn inverse(&self) -> Self {
        Self {
            mat: self.mat.transpose(),
        }
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self {
            mat: self.mat * other.mat,
        }
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    /// `(|R^T R - I|_F, det R)`.
    pub fn invariant_errors(&self) -> (f64, f64) {
        let e = self.mat.transpose() * self.mat - Matrix3::identity();
        (e.norm(), self.mat.determinant())
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.mat)
    }

    /// Geodesic distance `angle(p^T q)`.
    pub fn distance(&self, other: &Rotation) -> f64 {
        rotation_angle(&(self.mat.transpose() * other.mat))
    }
}

/// Angle of a rotation matrix: `atan2(|vee(R)|, (tr R - 1) / 2)`, the same
/// value as the clamped `arccos((tr R - 1) / 2)` without its precision loss
/// near 0 and pi.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = vee(m).norm();
    s.atan2(c)
}

/// Geodesic distance between two rotations given row-major 9-vectors.
pub fn distance_row_major(a: &[f64], b: &[f64]) -> f64 {
    // (a^T b)_ij = sum_k a_ki b_kj; only the trace and skew part are needed.
    let e = |i: usize, j: usize| a[i] * b[j] + a[3 + i] * b[3 + j] + a[6 + i] * b[6 + j];
    let tr = e(0, 0) + e(1, 1) + e(2, 2);
    let sx = 0.5 * (e(2, 1) - e(1, 2));
    let sy = 0.5 * (e(0, 2) - e(2, 0));
    let sz = 0.5 * (e(1, 0) - e(0, 1));
    let c = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    (sx * sx + sy * sy + sz * sz).sqrt().atan2(c)
}

/// Axis-angle vector with `|omega| < pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    omega: Vector3<f64>,
}

impl AxisAngle {
    pub fn new(omega: Vector3<f64>) -> Result<Self> {
        let theta = omega.norm();
        if !(theta < PI) {
            return Err(Error::InvalidArgument(format!(
                "axis-angle norm {theta} is not below pi"
            )));
        }
        Ok(Self { omega })
    }

    pub fn zero() -> Self {
        Self {
            omega: Vector3::zeros(),
        }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.omega
    }

    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }
}

/// Rodrigues factors `(sin t / t, (1 - cos t) / t^2)`.
fn rodrigues_factors(theta: f64) -> (f64, f64) {
    if theta <= SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / (theta * theta))
    }
}

/// Group exponential at the identity (Rodrigues' formula).
pub fn exp(w: &AxisAngle) -> Rotation {
    Rotation::from_matrix_unchecked(exp_matrix(&w.omega))
}

/// Rodrigues' formula for any axis-angle vector, without the `< pi` check.
pub(crate) fn exp_matrix(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_factors(w.norm());
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Group logarithm at the identity. Rejects rotations by (nearly) pi.
pub fn log(r: &Rotation) -> Result<AxisAngle> {
    Ok(AxisAngle {
        omega: log_vector(r.matrix())?,
    })
}

pub(crate) fn log_vector(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let tr = m.trace();
    if tr <= -1.0 + SO3_TRACE_TOL {
        return Err(Error::CutLocus(format!("rotation by (nearly) pi, trace {tr}")));
    }
    let v = vee(m);
    let gamma = rotation_angle(m);
    let k = if gamma <= SMALL_ANGLE {
        1.0 + gamma * gamma / 6.0
    } else {
        gamma / gamma.sin()
    };
    // vee already carries the 1/2 of gamma / (2 sin gamma)
    Ok(v * k)
}

/// `Exp_p(v) = p Exp_e(p^T v)` for an ambient tangent matrix `v` at `p`.
pub fn exp_at(p: &Rotation, v: &Matrix3<f64>) -> Rotation {
    let w = vee(&(p.mat.transpose() * v));
    Rotation::from_matrix_unchecked(p.mat * exp_matrix(&w))
}

/// `Log_p(q) = p [Log_e(p^T q)]x` as an ambient tangent matrix at `p`.
pub fn log_at(p: &Rotation, q: &Rotation) -> Result<Matrix3<f64>> {
    let w = log_vector(&(p.mat.transpose() * q.mat))?;
    Ok(p.mat * hat(&w))
}
