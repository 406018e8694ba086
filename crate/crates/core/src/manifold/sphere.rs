//! The unit hypersphere S^n embedded in R^{n+1}.
//!
//! Two layers live here: slice kernels (`exp_into`, `log_into`, `project`, ...)
//! that the batched samplers call on matrix rows, and the typed
//! [`SpherePoint`] API built on top of them.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Cut-locus margin on the inner product: `<p, q> > -1 + SPHERE_CUT_TOL`.
pub const SPHERE_CUT_TOL: f64 = 1e-9;
/// Below this tangent norm the exponential map returns its base point.
pub const EXP_IDENTITY_TOL: f64 = 1e-14;
/// Above `1 - LOG_IDENTITY_TOL` the logarithm returns the zero vector.
pub const LOG_IDENTITY_TOL: f64 = 1e-14;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// In-place tangential projection `xi <- xi - <xi, x> x`.
#[inline]
pub fn project(x: &[f64], xi: &mut [f64]) {
    let c = dot(x, xi);
    for (v, p) in xi.iter_mut().zip(x) {
        *v -= c * p;
    }
}

/// Normalize in place; fails on (near) zero vectors.
pub fn normalize(x: &mut [f64]) -> Result<()> {
    let r = norm(x);
    if !(r >= 1e-8) {
        return Err(Error::Retraction(format!("cannot normalize vector of norm {r:e}")));
    }
    x.iter_mut().for_each(|v| *v /= r);
    Ok(())
}

/// `Exp_p(v)` written into `out`, renormalized. `|v|` must be below the cut
/// locus; callers that need a guard use [`exp`].
pub fn exp_into(p: &[f64], v: &[f64], out: &mut [f64]) {
    let theta = norm(v);
    if theta <= EXP_IDENTITY_TOL {
        out.copy_from_slice(p);
        return;
    }
    let (s, c) = theta.sin_cos();
    let k = s / theta;
    for i in 0..p.len() {
        out[i] = c * p[i] + k * v[i];
    }
    let r = norm(out);
    out.iter_mut().for_each(|x| *x /= r);
}

/// `Log_p(q)` written into `out`. Returns the geodesic distance.
///
/// The angle is evaluated as `atan2(|q - <p,q>p|, <p,q>)`, which equals the
/// clamped `arccos <p,q>` but keeps full precision near 0 and pi.
pub fn log_into(p: &[f64], q: &[f64], out: &mut [f64]) -> Result<f64> {
    let c = dot(p, q).clamp(-1.0, 1.0);
    if c <= -1.0 + SPHERE_CUT_TOL {
        return Err(Error::CutLocus(format!(
            "sphere log of (near) antipodal pair, <p,q> = {c}"
        )));
    }
    for i in 0..p.len() {
        out[i] = q[i] - c * p[i];
    }
    if c >= 1.0 - LOG_IDENTITY_TOL {
        out.iter_mut().for_each(|x| *x = 0.0);
        return Ok(0.0);
    }
    let s = norm(out);
    if s == 0.0 {
        out.iter_mut().for_each(|x| *x = 0.0);
        return Ok(0.0);
    }
    let theta = s.atan2(c);
    let k = theta / s;
    out.iter_mut().for_each(|x| *x *= k);
    Ok(theta)
}

/// Geodesic (great-circle) distance.
pub fn distance(p: &[f64], q: &[f64]) -> f64 {
    let c = dot(p, q);
    let mut s2 = 0.0;
    for i in 0..p.len() {
        let d = q[i] - c * p[i];
        s2 += d * d;
    }
    s2.sqrt().atan2(c)
}

/// Orthonormal basis of `T_x S^n`, written row-wise into `out` (`n` rows of
/// length `n + 1`).
///
/// Gram-Schmidt against `x` over the `n` canonical axes least aligned with it,
/// so the construction never meets a near-parallel axis.
pub fn tangent_basis_into(x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let n = d - 1;
    debug_assert_eq!(out.len(), n * d);
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()).then(a.cmp(&b)));
    for (row, &axis) in axes.iter().take(n).enumerate() {
        let (done, rest) = out.split_at_mut(row * d);
        let e = &mut rest[..d];
        e.iter_mut().for_each(|v| *v = 0.0);
        e[axis] = 1.0;
        // two passes of modified Gram-Schmidt for orthogonality to 1e-16
        for _ in 0..2 {
            project(x, e);
            for prev in done.chunks_exact(d) {
                let c = dot(prev, e);
                for (v, p) in e.iter_mut().zip(prev) {
                    *v -= c * p;
                }
            }
        }
        let r = norm(e);
        e.iter_mut().for_each(|v| *v /= r);
    }
}

/// Owned orthonormal tangent basis at `x`.
pub fn tangent_basis(x: &[f64]) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut buf = vec![0.0; (d - 1) * d];
    tangent_basis_into(x, &mut buf);
    buf.chunks_exact(d).map(<[f64]>::to_vec).collect()
}

/// Surface area of the unit sphere S^n.
pub fn area(n: usize) -> f64 {
    let m = (n + 1) as f64 / 2.0;
    2.0 * PI.powf(m) / gamma(m)
}

// Gamma at integers and half-integers, the only arguments `area` needs.
fn gamma(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as u64).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut a = 0.5;
        while a < x - 1e-12 {
            g *= a;
            a += 1.0;
        }
        g
    }
}

/// A point on S^n, stored by its ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Accepts coordinates within 1e-6 of unit norm and renormalizes them.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidArgument(
                "sphere points need at least 2 coordinates".into(),
            ));
        }
        let r = norm(&coords);
        if !((r - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidArgument(format!("coordinates have norm {r}, expected 1")));
        }
        Self::from_ambient(coords)
    }

    /// Radial retraction of an arbitrary nonzero ambient vector.
    pub fn from_ambient(mut coords: Vec<f64>) -> Result<Self> {
        normalize(&mut coords)?;
        Ok(Self { coords })
    }

    /// The `i`-th canonical axis of R^{dim}.
    pub fn axis(dim: usize, i: usize) -> Self {
        let mut coords = vec![0.0; dim];
        coords[i] = 1.0;
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Intrinsic dimension n.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn distance(&self, other: &SpherePoint) -> f64 {
        distance(&self.coords, &other.coords)
    }
}

/// `Exp_p(v)`, rejecting steps that reach the cut locus.
pub fn exp(p: &SpherePoint, v: &[f64]) -> Result<SpherePoint> {
    check_len(p, v)?;
    let theta = norm(v);
    if theta >= PI - SPHERE_CUT_TOL {
        return Err(Error::CutLocus(format!(
            "tangent step of norm {theta} reaches the antipode"
        )));
    }
    let mut out = vec![0.0; v.len()];
    exp_into(p.coords(), v, &mut out);
    Ok(SpherePoint { coords: out })
}

/// `Log_p(q)` as an ambient vector tangent at `p`.
pub fn log(p: &SpherePoint, q: &SpherePoint) -> Result<Vec<f64>> {
    check_len(p, q.coords())?;
    let mut out = vec![0.0; p.ambient_dim()];
    log_into(p.coords(), q.coords(), &mut out)?;
    Ok(out)
}

/// `P_p(xi) = xi - <xi, p> p`.
pub fn tangent_project(p: &SpherePoint, xi: &[f64]) -> Vec<f64> {
    let mut out = xi.to_vec();
    project(p.coords(), &mut out);
    out
}

/// Matrix form of the projection, entries `delta_ij - x_i x_j`, row-major.
pub fn projection_matrix(p: &SpherePoint) -> Vec<f64> {
    let x = p.coords();
    let d = x.len();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = if i == j { 1.0 } else { 0.0 } - x[i] * x[j];
        }
    }
    m
}

fn check_len(p: &SpherePoint, v: &[f64]) -> Result<()> {
    if p.ambient_dim() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: point has {} coordinates, vector has {}",
            p.ambient_dim(),
            v.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn e(i: usize) -> SpherePoint {
        SpherePoint::axis(3, i)
    }

    #[test]
    fn exp_identity_and_quarter_circle() {
        let p = e(0);
        assert_eq!(exp(&p, &[0.0; 3]).unwrap(), p);
        let q = exp(&p, &[0.0, PI / 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(q.coords(), e(1).coords(), epsilon = 1e-15);
        let q = exp(&p, &[0.0, 0.0, 0.3]).unwrap();
        assert_abs_diff_eq!(q.coords(), &[0.3f64.cos(), 0.0, 0.3f64.sin()][..], epsilon = 1e-15);
    }

    #[test]
    fn exp_rejects_cut_locus() {
        let err = exp(&e(0), &[0.0, PI, 0.0]).unwrap_err();
        assert_eq!(err.class(), "CutLocusError");
    }

    #[test]
    fn log_basic_cases() {
        assert_eq!(log(&e(0), &e(0)).unwrap(), vec![0.0; 3]);
        let v = log(&e(0), &e(1)).unwrap();
        assert_abs_diff_eq!(&v[..], &[0.0, PI / 2.0, 0.0][..], epsilon = 1e-15);
        let anti = SpherePoint::new(vec![-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(log(&e(0), &anti).unwrap_err().class(), "CutLocusError");
    }

    #[test]
    fn projection_cases() {
        assert_eq!(tangent_project(&e(0), &[1.0, 0.0, 0.0]), vec![0.0; 3]);
        assert_eq!(tangent_project(&e(0), &[0.0, 1.0, 0.0]), vec![0.0, 1.0, 0.0]);
        let m = projection_matrix(&SpherePoint::new(vec![0.6, 0.8, 0.0]).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i * 3 + j], m[j * 3 + i]);
            }
        }
    }

    #[test]
    fn area_values() {
        assert_abs_diff_eq!(area(1), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(area(2), 4.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(area(3), 2.0 * PI * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(area(5), PI.powi(3), epsilon = 1e-12);
    }

    fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 0.1)
            .prop_map(|mut v| {
                normalize(&mut v).unwrap();
                v
            })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in unit(4), xi in prop::collection::vec(-3.0f64..3.0, 4)) {
            let p = SpherePoint::new(x).unwrap();
            let once = tangent_project(&p, &xi);
            let twice = tangent_project(&p, &once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn tangent_basis_is_orthonormal(x in unit(6)) {
            let basis = tangent_basis(&x);
            prop_assert_eq!(basis.len(), 5);
            for (i, a) in basis.iter().enumerate() {
                prop_assert!(dot(a, &x).abs() < 1e-14);
                for (j, b) in basis.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(a, b) - want).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn log_norm_is_geodesic_distance(x in unit(3), y in unit(3)) {
            prop_assume!(dot(&x, &y) > -1.0 + 1e-6);
            let p = SpherePoint::new(x.clone()).unwrap();
            let q = SpherePoint::new(y.clone()).unwrap();
            let v = log(&p, &q).unwrap();
            let acos = dot(&x, &y).clamp(-1.0, 1.0).acos();
            prop_assert!((norm(&v) - acos).abs() <= 1e-10);
            prop_assert!(norm(&v) < PI);
        }
    }
}
