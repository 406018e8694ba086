//! Truncation-orthogonalization embedding of SO(3) into R^6.
//!
//! `truncate` keeps the first two columns of a rotation; `orthonormalize`
//! rebuilds a rotation from any 6-vector by Gram-Schmidt plus a cross product.
//! Truncated rotations have norm `sqrt(2)`, so the unit-sphere route used for
//! training works with `truncate(R) / sqrt(2)` on S^5; `orthonormalize` is
//! scale invariant and maps both forms back.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix3, Vector3};

use super::so3::Rotation;
use crate::error::{Error, Result};

/// Minimum angle between the two column vectors accepted by `orthonormalize`.
pub const MIN_COLUMN_ANGLE: f64 = 1e-8;

/// Stacked first two columns `(r1; r2)` of a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedded6 {
    vec: [f64; 6],
}

impl Embedded6 {
    pub fn new(vec: [f64; 6]) -> Self {
        Self { vec }
    }

    pub fn as_array(&self) -> &[f64; 6] {
        &self.vec
    }

    /// Scaled onto the unit sphere S^5.
    pub fn to_sphere(&self) -> [f64; 6] {
        self.vec.map(|v| v * FRAC_1_SQRT_2)
    }
}

pub fn truncate(r: &Rotation) -> Embedded6 {
    let m = r.matrix();
    Embedded6 {
        vec: [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]],
    }
}

/// Gram-Schmidt on `(l1, l2)`, then `r3 = r1 x r2`.
pub fn orthonormalize(l: &Embedded6) -> Result<Rotation> {
    orthonormalize_slice(&l.vec)
}

pub(crate) fn orthonormalize_slice(l: &[f64]) -> Result<Rotation> {
    debug_assert_eq!(l.len(), 6);
    let l1 = Vector3::new(l[0], l[1], l[2]);
    let l2 = Vector3::new(l[3], l[4], l[5]);
    let n1 = l1.norm();
    let n2 = l2.norm();
    if !(n1 > 1e-12) || !(n2 > 1e-12) {
        return Err(Error::DegenerateEmbedding(format!(
            "zero column (|l1| = {n1:e}, |l2| = {n2:e})"
        )));
    }
    let sin_angle = l1.cross(&l2).norm() / (n1 * n2);
    if !(sin_angle > MIN_COLUMN_ANGLE.sin()) {
        return Err(Error::DegenerateEmbedding(format!(
            "columns are (nearly) parallel, sin(angle) = {sin_angle:e}"
        )));
    }
    let r1 = l1 / n1;
    let u2 = l2 - r1 * r1.dot(&l2);
    let r2 = u2 / u2.norm();
    let r3 = r1.cross(&r2);
    Ok(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[r1, r2, r3])))
}

/// Unit 6-vector on S^5 for a rotation.
pub fn rotation_to_sphere(r: &Rotation) -> [f64; 6] {
    truncate(r).to_sphere()
}

/// Rotation for any (non-degenerate) point of R^6, in particular S^5.
pub fn sphere_to_rotation(x: &[f64]) -> Result<Rotation> {
    orthonormalize_slice(x)
}
