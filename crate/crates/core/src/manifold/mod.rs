//! Differential-geometric kernels for S^n and SO(3).

pub mod embed6;
pub mod so3;
pub mod sphere;

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::error::{Error, Result};

pub use embed6::Embedded6;
pub use so3::{AxisAngle, Rotation};
pub use sphere::SpherePoint;

/// Tangency tolerance for [`TangentVector`] construction.
pub const TANGENT_TOL: f64 = 1e-10;

/// Which manifold a point, sample set or process lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Manifold {
    /// The unit sphere S^n in R^{n+1}.
    Sphere(usize),
    /// Rotations, stored as row-major 3x3 matrices.
    So3,
}

impl Manifold {
    pub const S2: Manifold = Manifold::Sphere(2);
    pub const S5: Manifold = Manifold::Sphere(5);

    /// Number of ambient coordinates per point.
    pub fn ambient_dim(self) -> usize {
        match self {
            Manifold::Sphere(n) => n + 1,
            Manifold::So3 => 9,
        }
    }

    /// Intrinsic dimension.
    pub fn dim(self) -> usize {
        match self {
            Manifold::Sphere(n) => n,
            Manifold::So3 => 3,
        }
    }

    /// Geodesic distance between two points given by ambient coordinates.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        // rounding would otherwise leave ~1e-16 for a point and itself
        if a == b {
            return 0.0;
        }
        match self {
            Manifold::Sphere(_) => sphere::distance(a, b),
            Manifold::So3 => so3::distance_row_major(a, b),
        }
    }

    /// Manifold implied by a column count of a sample file. Nine columns are
    /// read as SO(3), not S^8.
    pub fn from_ambient_dim(d: usize) -> Result<Self> {
        match d {
            9 => Ok(Manifold::So3),
            d if d >= 2 => Ok(Manifold::Sphere(d - 1)),
            _ => Err(Error::InvalidArgument(format!(
                "no manifold has {d} ambient coordinates"
            ))),
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Sphere(n) => write!(f, "s{n}"),
            Manifold::So3 => f.write_str("so3"),
        }
    }
}

impl FromStr for Manifold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "so3" {
            return Ok(Manifold::So3);
        }
        s.strip_prefix('s')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(Manifold::Sphere)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown manifold '{s}'")))
    }
}

/// A point on one of the supported manifolds.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Sphere(SpherePoint),
    Rotation(Rotation),
}

impl ManifoldPoint {
    pub fn manifold(&self) -> Manifold {
        match self {
            ManifoldPoint::Sphere(p) => Manifold::Sphere(p.dim()),
            ManifoldPoint::Rotation(_) => Manifold::So3,
        }
    }

    /// Ambient coordinates (row-major for rotations).
    pub fn ambient(&self) -> Vec<f64> {
        match self {
            ManifoldPoint::Sphere(p) => p.coords().to_vec(),
            ManifoldPoint::Rotation(r) => r.to_row_major().to_vec(),
        }
    }

    /// Checked construction from ambient coordinates.
    pub fn from_ambient(m: Manifold, x: &[f64]) -> Result<Self> {
        if x.len() != m.ambient_dim() {
            return Err(Error::InvalidArgument(format!(
                "{m} needs {} coordinates, got {}",
                m.ambient_dim(),
                x.len()
            )));
        }
        match m {
            Manifold::Sphere(_) => Ok(ManifoldPoint::Sphere(SpherePoint::new(x.to_vec())?)),
            Manifold::So3 => Ok(ManifoldPoint::Rotation(Rotation::from_row_major(x)?)),
        }
    }

    pub fn distance(&self, other: &ManifoldPoint) -> Result<f64> {
        match (self, other) {
            (ManifoldPoint::Sphere(a), ManifoldPoint::Sphere(b)) if a.dim() == b.dim() => Ok(a.distance(b)),
            (ManifoldPoint::Rotation(a), ManifoldPoint::Rotation(b)) => Ok(a.distance(b)),
            _ => Err(Error::InvalidArgument("points live on different manifolds".into())),
        }
    }
}

/// An ambient vector tangent at its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: ManifoldPoint,
    vec: Vec<f64>,
}

impl TangentVector {
    /// Checks tangency: `<v, x> ~ 0` on spheres, `p^T v` skew on SO(3).
    pub fn new(base: ManifoldPoint, vec: Vec<f64>) -> Result<Self> {
        let m = base.manifold();
        if vec.len() != m.ambient_dim() {
            return Err(Error::InvalidArgument(format!(
                "tangent vector on {m} needs {} entries, got {}",
                m.ambient_dim(),
                vec.len()
            )));
        }
        let err = match &base {
            ManifoldPoint::Sphere(p) => sphere::dot(p.coords(), &vec).abs(),
            ManifoldPoint::Rotation(r) => {
                let a = r.matrix().transpose() * Matrix3::from_row_slice(&vec);
                (a + a.transpose()).norm()
            }
        };
        if err > TANGENT_TOL {
            return Err(Error::InvalidArgument(format!(
                "vector is not tangent (normal component {err:e})"
            )));
        }
        Ok(Self { base, vec })
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let n = base.manifold().ambient_dim();
        Self {
            base,
            vec: vec![0.0; n],
        }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    /// Euclidean norm of the ambient vector (Frobenius on SO(3)).
    pub fn norm(&self) -> f64 {
        sphere::norm(&self.vec)
    }
}

/// `Exp_p(v)` on S^n.
pub fn sphere_exp(p: &SpherePoint, v: &TangentVector) -> Result<SpherePoint> {
    sphere::exp(p, v.vec())
}

/// `Log_p(q)` on S^n.
pub fn sphere_log(p: &SpherePoint, q: &SpherePoint) -> Result<TangentVector> {
    let v = sphere::log(p, q)?;
    Ok(TangentVector {
        base: ManifoldPoint::Sphere(p.clone()),
        vec: v,
    })
}

/// `P_p(xi)` on S^n.
pub fn sphere_tangent_project(p: &SpherePoint, xi: &[f64]) -> TangentVector {
    TangentVector {
        base: ManifoldPoint::Sphere(p.clone()),
        vec: sphere::tangent_project(p, xi),
    }
}

pub fn so3_exp(w: &AxisAngle) -> Rotation {
    so3::exp(w)
}

pub fn so3_log(r: &Rotation) -> Result<AxisAngle> {
    so3::log(r)
}

/// Left-translated exponential on SO(3).
pub fn so3_exp_at(p: &Rotation, v: &TangentVector) -> Result<Rotation> {
    if v.base().manifold() != Manifold::So3 {
        return Err(Error::InvalidArgument("tangent vector is not on SO(3)".into()));
    }
    Ok(so3::exp_at(p, &Matrix3::from_row_slice(v.vec())))
}

/// Left-translated logarithm on SO(3), as an ambient tangent matrix at `p`.
pub fn so3_log_at(p: &Rotation, q: &Rotation) -> Result<TangentVector> {
    let m = so3::log_at(p, q)?;
    Ok(TangentVector {
        base: ManifoldPoint::Rotation(*p),
        vec: m.transpose().as_slice().to_vec(),
    })
}

pub fn embed6_truncate(r: &Rotation) -> Embedded6 {
    embed6::truncate(r)
}

pub fn embed6_orthonormalize(l: &Embedded6) -> Result<Rotation> {
    embed6::orthonormalize(l)
}

/// Maximum ambient distance from the manifold accepted by [`retract`].
pub const RETRACT_MAX_OFFSET: f64 = 0.5;

/// Pull an ambient point back onto the manifold: radial normalization on
/// spheres, Gram-Schmidt on the first two columns for SO(3).
pub fn retract(m: Manifold, x: &[f64]) -> Result<ManifoldPoint> {
    if x.len() != m.ambient_dim() {
        return Err(Error::InvalidArgument(format!(
            "{m} needs {} coordinates, got {}",
            m.ambient_dim(),
            x.len()
        )));
    }
    match m {
        Manifold::Sphere(_) => {
            let r = sphere::norm(x);
            if !(r >= 1e-8) {
                return Err(Error::Retraction(format!("sphere point of norm {r:e}")));
            }
            Ok(ManifoldPoint::Sphere(SpherePoint::from_ambient(x.to_vec())?))
        }
        Manifold::So3 => {
            let cols = [x[0], x[3], x[6], x[1], x[4], x[7]];
            let r = embed6::orthonormalize_slice(&cols).map_err(|e| Error::Retraction(e.to_string()))?;
            Ok(ManifoldPoint::Rotation(r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    #[test]
    fn manifold_tags() {
        assert_eq!("s2".parse::<Manifold>().unwrap(), Manifold::S2);
        assert_eq!("SO3".parse::<Manifold>().unwrap(), Manifold::So3);
        assert!("t2".parse::<Manifold>().is_err());
        assert_eq!(Manifold::from_ambient_dim(6).unwrap(), Manifold::S5);
        assert_eq!(Manifold::from_ambient_dim(9).unwrap(), Manifold::So3);
        assert_eq!(Manifold::S5.to_string(), "s5");
    }

    #[test]
    fn retract_sphere() {
        let p = retract(Manifold::S2, &[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.ambient(), vec![1.0, 0.0, 0.0]);
        let on = [0.6, 0.0, 0.8];
        let p = retract(Manifold::S2, &on).unwrap();
        assert_abs_diff_eq!(&p.ambient()[..], &on[..], epsilon = 1e-12);
        assert_eq!(
            retract(Manifold::S2, &[0.0, 1e-9, 0.0]).unwrap_err().class(),
            "RetractionError"
        );
    }

    #[test]
    fn retract_rotation_identity_and_degenerate() {
        let id = Rotation::identity().to_row_major();
        assert_eq!(retract(Manifold::So3, &id).unwrap().ambient(), id.to_vec());
        let bad = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(retract(Manifold::So3, &bad).unwrap_err().class(), "RetractionError");
    }

    #[test]
    fn tangent_vector_checks() {
        let p = ManifoldPoint::Sphere(SpherePoint::axis(3, 0));
        assert!(TangentVector::new(p.clone(), vec![0.0, 1.0, 0.0]).is_ok());
        assert!(TangentVector::new(p, vec![1.0, 1.0, 0.0]).is_err());
        let r = so3_exp(&AxisAngle::new(Vector3::new(0.3, 0.1, -0.2)).unwrap());
        let v = so3::log_at(&r, &Rotation::identity()).unwrap();
        let rows = v.transpose().as_slice().to_vec();
        assert!(TangentVector::new(ManifoldPoint::Rotation(r), rows).is_ok());
    }

    #[test]
    fn so3_exp_at_zero_is_base() {
        let p = so3_exp(&AxisAngle::new(Vector3::new(0.3, 0.1, -0.2)).unwrap());
        let zero = TangentVector::zero(ManifoldPoint::Rotation(p));
        assert_eq!(so3_exp_at(&p, &zero).unwrap(), p);
    }
}
