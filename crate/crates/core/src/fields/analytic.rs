//! Closed-form fields used as oracles and baselines.

use ndarray::{Array1, Array2, ArrayView2};

use super::VectorField;
use crate::manifold::{sphere, Manifold};

/// The zero field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroField(pub Manifold);

impl VectorField for ZeroField {
    fn manifold(&self) -> Manifold {
        self.0
    }

    fn eval(&self, _t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::zeros(x.dim())
    }

    fn eval_with_divergence(&self, _t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        (Array2::zeros(x.dim()), Array1::zeros(x.nrows()))
    }
}

/// Rigid rotation `x -> a x x` on S^2: a Killing field, divergence free.
/// Its flow over unit time rotates by `|a|` about `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationField {
    pub axis: [f64; 3],
}

impl RotationField {
    pub fn new(axis: [f64; 3]) -> Self {
        Self { axis }
    }

    /// The field whose unit-time flow carries `x0` to `x1` along their great
    /// circle.
    pub fn geodesic(x0: &[f64], x1: &[f64]) -> Self {
        let n = cross(x0, x1);
        let s = sphere::norm(&n);
        if s == 0.0 {
            return Self { axis: [0.0; 3] };
        }
        let theta = sphere::distance(x0, x1);
        Self {
            axis: [n[0] * theta / s, n[1] * theta / s, n[2] * theta / s],
        }
    }
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl VectorField for RotationField {
    fn manifold(&self) -> Manifold {
        Manifold::S2
    }

    fn eval(&self, _t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for (r, xr) in x.outer_iter().enumerate() {
            let v = cross(&self.axis, &[xr[0], xr[1], xr[2]]);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&v));
        }
        out
    }

    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        (self.eval(t, x), Array1::zeros(x.nrows()))
    }
}

/// `P_x c` for a constant ambient vector `c`; divergence `-n <c, x>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedConstantField {
    pub c: Vec<f64>,
}

impl VectorField for ProjectedConstantField {
    fn manifold(&self) -> Manifold {
        Manifold::Sphere(self.c.len() - 1)
    }

    fn eval(&self, _t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for (r, xr) in x.outer_iter().enumerate() {
            let mut v = self.c.clone();
            sphere::project(&xr.to_vec(), &mut v);
            out.row_mut(r).assign(&Array1::from(v));
        }
        out
    }

    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let n = (self.c.len() - 1) as f64;
        let div = x
            .outer_iter()
            .map(|xr| -n * sphere::dot(&self.c, &xr.to_vec()))
            .collect();
        (self.eval(t, x), div)
    }
}

/// `P_x A x`; divergence `tr A - (n + 1) x^T A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub a: Array2<f64>,
}

impl VectorField for LinearField {
    fn manifold(&self) -> Manifold {
        Manifold::Sphere(self.a.nrows() - 1)
    }

    fn eval(&self, _t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.a.t());
        for (xr, mut yr) in x.outer_iter().zip(y.outer_iter_mut()) {
            sphere::project(&xr.to_vec(), yr.as_slice_mut().unwrap());
        }
        y
    }

    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let d = self.a.nrows() as f64;
        let tr = self.a.diag().sum();
        let ax = x.dot(&self.a.t());
        let div = x
            .outer_iter()
            .zip(ax.outer_iter())
            .map(|(xr, yr)| tr - d * xr.dot(&yr))
            .collect();
        (self.eval(t, x), div)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_uniform;
    use crate::fields::net::{Activation, FieldNet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn projected_constant_matches_net_with_bias() {
        let c = vec![0.4, 0.1, -0.9];
        let mut net = FieldNet::zeros(Manifold::S2, &[3], Activation::Tanh, 2).unwrap();
        net.output_bias_mut().copy_from_slice(&c);
        let x = sample_uniform(Manifold::S2, 64, 1).unwrap();
        let (fa, da) = ProjectedConstantField { c }.eval_with_divergence(0.2, x.points().view());
        let (fb, db) = net.eval_with_divergence(0.2, x.points().view());
        assert_abs_diff_eq!(fa, fb, epsilon = 1e-14);
        assert_abs_diff_eq!(da, db, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_rotation_axis() {
        let f = RotationField::geodesic(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(
            &f.axis[..],
            &[0.0, 0.0, std::f64::consts::FRAC_PI_2][..],
            epsilon = 1e-15
        );
    }
}
