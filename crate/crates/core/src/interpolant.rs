//! Geodesic interpolants `I(t; x0, x1)` and their exact time derivatives.
//!
//! On S^n the interpolant is the great circle from `x0` to `x1`; on SO(3) it
//! is `x0 exp(t w)` with `w = log(x0^T x1)`. SO(3) tangents are ambient 3x3
//! matrices stored row-major, measured in the Frobenius norm.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::so3::{self, SO3_TRACE_TOL};
use crate::manifold::sphere::{self, SPHERE_CUT_TOL};
use crate::manifold::{Manifold, ManifoldPoint, Rotation, SpherePoint, TangentVector};

/// Coupled triples `(t, x0, x1)` with the cached logarithm, the interpolated
/// point and the path velocity. All point arrays hold one ambient row per
/// element.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantBatch {
    pub manifold: Manifold,
    pub t: Array1<f64>,
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    /// `Log_{x0} x1`, tangent at `x0`.
    pub log01: Array2<f64>,
    pub xt: Array2<f64>,
    /// `d/dt I(t; x0, x1)`, tangent at `xt`.
    pub dxt: Array2<f64>,
}

impl InterpolantBatch {
    /// Interpolates every pair. Fails with `CutLocusError` if any pair is
    /// outside the domain; run [`filter_cut_locus`] or [`repair_cut_locus`]
    /// first.
    pub fn build(m: Manifold, t: &[f64], x0: Array2<f64>, x1: Array2<f64>) -> Result<Self> {
        let d = m.ambient_dim();
        let n = t.len();
        if x0.dim() != (n, d) || x1.dim() != (n, d) {
            return Err(Error::InvalidArgument(format!(
                "batch of {n} times needs two {n}x{d} point arrays, got {:?} and {:?}",
                x0.dim(),
                x1.dim()
            )));
        }
        if let Some(bad) = t.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!("time {bad} outside [0, 1]")));
        }
        let x0 = x0.as_standard_layout().into_owned();
        let x1 = x1.as_standard_layout().into_owned();
        let mut log01 = Array2::zeros((n, d));
        let mut xt = Array2::zeros((n, d));
        let mut dxt = Array2::zeros((n, d));
        {
            let a = x0.as_slice().unwrap();
            let b = x1.as_slice().unwrap();
            let l = log01.as_slice_mut().unwrap();
            let p = xt.as_slice_mut().unwrap();
            let v = dxt.as_slice_mut().unwrap();
            l.par_chunks_mut(d)
                .zip(p.par_chunks_mut(d))
                .zip(v.par_chunks_mut(d))
                .enumerate()
                .try_for_each(|(i, ((l, p), v))| {
                    let (a, b) = (&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]);
                    match m {
                        Manifold::Sphere(_) => interp_sphere_into(t[i], a, b, l, p, v),
                        Manifold::So3 => interp_so3_into(t[i], a, b, l, p, v),
                    }
                })?;
        }
        Ok(Self {
            manifold: m,
            t: Array1::from(t.to_vec()),
            x0,
            x1,
            log01,
            xt,
            dxt,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Great-circle interpolant on rows: writes `L = Log_{x0} x1`, `I(t)` and
/// `d/dt I(t) = cos(t|L|) L - |L| sin(t|L|) x0`.
pub fn interp_sphere_into(
    t: f64,
    x0: &[f64],
    x1: &[f64],
    log01: &mut [f64],
    xt: &mut [f64],
    dxt: &mut [f64],
) -> Result<()> {
    let theta = sphere::log_into(x0, x1, log01)?;
    if theta == 0.0 {
        xt.copy_from_slice(x0);
        dxt.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let (s, c) = (t * theta).sin_cos();
    for i in 0..x0.len() {
        let u = log01[i] / theta;
        xt[i] = c * x0[i] + s * u;
        dxt[i] = c * log01[i] - theta * s * x0[i];
    }
    let r = sphere::norm(xt);
    xt.iter_mut().for_each(|v| *v /= r);
    Ok(())
}

/// Rows hold row-major matrices. `log01 = x0 [w]x`, `xt = x0 exp(t w)`,
/// `dxt = xt [w]x`.
pub fn interp_so3_into(
    t: f64,
    x0: &[f64],
    x1: &[f64],
    log01: &mut [f64],
    xt: &mut [f64],
    dxt: &mut [f64],
) -> Result<()> {
    let a = Matrix3::from_row_slice(x0);
    let b = Matrix3::from_row_slice(x1);
    let w = so3::log_vector(&(a.transpose() * b))?;
    let h = so3::hat(&w);
    let p = a * so3::exp_matrix(&(w * t));
    write_row_major(&(a * h), log01);
    write_row_major(&p, xt);
    write_row_major(&(p * h), dxt);
    Ok(())
}

fn write_row_major(m: &Matrix3<f64>, out: &mut [f64]) {
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
}

/// `(I(t; x0, x1), d/dt I(t; x0, x1))` on S^n.
pub fn interp_sphere(t: f64, x0: &SpherePoint, x1: &SpherePoint) -> Result<(SpherePoint, TangentVector)> {
    let d = x0.ambient_dim();
    if x1.ambient_dim() != d {
        return Err(Error::InvalidArgument("endpoints on different spheres".into()));
    }
    let (mut l, mut p, mut v) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    interp_sphere_into(t, x0.coords(), x1.coords(), &mut l, &mut p, &mut v)?;
    let xt = SpherePoint::new(p)?;
    let dxt = TangentVector::new(ManifoldPoint::Sphere(xt.clone()), v)?;
    Ok((xt, dxt))
}

/// `(I(t; x0, x1), d/dt I(t; x0, x1))` on SO(3); the velocity is the ambient
/// matrix `xt [w]x` with Frobenius norm `sqrt(2) |w|`.
pub fn interp_so3(t: f64, x0: &Rotation, x1: &Rotation) -> Result<(Rotation, TangentVector)> {
    let (mut l, mut p, mut v) = ([0.0; 9], [0.0; 9], [0.0; 9]);
    interp_so3_into(t, &x0.to_row_major(), &x1.to_row_major(), &mut l, &mut p, &mut v)?;
    let xt = Rotation::from_row_major(&p)?;
    let dxt = TangentVector::new(ManifoldPoint::Rotation(xt), v.to_vec())?;
    Ok((xt, dxt))
}

/// Whether `(x0, x1)` is inside the interpolant's domain.
pub fn pair_is_valid(m: Manifold, x0: &[f64], x1: &[f64]) -> bool {
    match m {
        Manifold::Sphere(_) => sphere::dot(x0, x1) > -1.0 + SPHERE_CUT_TOL,
        Manifold::So3 => {
            let tr: f64 = (0..9).map(|k| x0[k] * x1[k]).sum();
            tr > -1.0 + SO3_TRACE_TOL
        }
    }
}

/// Drops pairs on (or numerically at) the cut locus. Returns the kept pairs
/// in their original order and the number dropped.
pub fn filter_cut_locus(m: Manifold, x0: &Array2<f64>, x1: &Array2<f64>) -> (Array2<f64>, Array2<f64>, usize) {
    let d = m.ambient_dim();
    let keep: Vec<usize> = (0..x0.nrows())
        .filter(|&i| {
            let a = x0.row(i);
            let b = x1.row(i);
            pair_is_valid(
                m,
                a.as_slice().unwrap_or(&a.to_vec()),
                b.as_slice().unwrap_or(&b.to_vec()),
            )
        })
        .collect();
    let rejected = x0.nrows() - keep.len();
    let mut k0 = Array2::zeros((keep.len(), d));
    let mut k1 = Array2::zeros((keep.len(), d));
    for (r, &i) in keep.iter().enumerate() {
        k0.row_mut(r).assign(&x0.row(i));
        k1.row_mut(r).assign(&x1.row(i));
    }
    (k0, k1, rejected)
}

/// Re-pairs every cut-locus pair by replacing its `x0` row with fresh draws
/// from `draw` until the pair is valid. Returns the number of replacements.
pub fn repair_cut_locus<F>(m: Manifold, x0: &mut Array2<f64>, x1: &Array2<f64>, mut draw: F) -> usize
where
    F: FnMut(&mut [f64]),
{
    let d = m.ambient_dim();
    let mut buf = vec![0.0; d];
    let mut replaced = 0;
    for i in 0..x0.nrows() {
        let b = x1.row(i).to_vec();
        loop {
            buf.iter_mut().zip(x0.row(i)).for_each(|(o, v)| *o = *v);
            if pair_is_valid(m, &buf, &b) {
                break;
            }
            draw(&mut buf);
            x0.row_mut(i).iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
            replaced += 1;
        }
    }
    replaced
}

/// `[w]x` for a tangent matrix `xt [w]x`: the body angular velocity.
pub fn so3_body_velocity(xt: &[f64], dxt: &[f64]) -> Vector3<f64> {
    let p = Matrix3::from_row_slice(xt);
    let v = Matrix3::from_row_slice(dxt);
    so3::vee(&(p.transpose() * v))
}
