//! Negative log-likelihood through the continuity equation.
//!
//! Each sample is carried back to t = 0 along the velocity flow while the
//! divergence is integrated alongside:
//! `-log p_1(x) = -log p_0(X_0) + int_0^1 div v(t, X_t) dt`.

use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::{retract_rows, PATH_CHUNK};
use crate::distributions::SampleSet;
use crate::error::{Error, Result};
use crate::fields::{Direction, VectorField};
use crate::manifold::Manifold;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllConfig {
    /// RK4 steps over `[0, 1]`.
    pub steps: usize,
}

impl Default for NllConfig {
    fn default() -> Self {
        Self { steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    /// Per-sample NLL in nats.
    pub nll: Array1<f64>,
    /// Points reached at t = 0.
    pub x0: Array2<f64>,
    /// `int_0^1 div v dt` per sample.
    pub divergence_integral: Array1<f64>,
}

impl NllOutput {
    pub fn mean(&self) -> f64 {
        self.nll.mean().unwrap_or(f64::NAN)
    }
}

/// `prior_log_density` is evaluated at the t = 0 endpoint of each flow line.
pub fn nll_ode<F>(
    velocity: &dyn VectorField,
    samples: &SampleSet,
    prior_log_density: F,
    cfg: &NllConfig,
) -> Result<NllOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if cfg.steps == 0 {
        return Err(Error::Config("nll steps must be at least 1".into()));
    }
    let m = samples.manifold();
    if !matches!(m, Manifold::Sphere(_)) || velocity.manifold() != m {
        return Err(Error::Config(format!(
            "nll needs a sphere field matching the samples, got {} and {m}",
            velocity.manifold()
        )));
    }
    let n = samples.len();
    let starts: Vec<usize> = (0..n).step_by(PATH_CHUNK).collect();
    let parts: Vec<Result<(Array2<f64>, Array1<f64>)>> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + PATH_CHUNK).min(n);
            backward_flow(velocity, samples.points().slice(s![lo..hi, ..]), cfg.steps)
        })
        .collect();
    let mut x0 = Array2::zeros(samples.points().raw_dim());
    let mut div = Array1::zeros(n);
    for (&lo, part) in starts.iter().zip(parts) {
        let (x, l) = part?;
        let hi = lo + x.nrows();
        x0.slice_mut(s![lo..hi, ..]).assign(&x);
        div.slice_mut(s![lo..hi]).assign(&l);
    }
    let nll = Array1::from_iter(
        x0.outer_iter()
            .zip(div.iter())
            .map(|(x, l)| -prior_log_density(x.as_slice().unwrap()) + l),
    );
    Ok(NllOutput {
        nll,
        x0,
        divergence_integral: div,
    })
}

/// RK4 on the augmented state `(x, l)` in reversed time `s = 1 - t`.
fn backward_flow(velocity: &dyn VectorField, x1: ArrayView2<f64>, steps: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let drift = crate::fields::PerturbedDrift::deterministic(velocity);
    let h = 1.0 / steps as f64;
    let mut x = x1.to_owned();
    let mut l = Array1::zeros(x.nrows());
    let f = |s: f64, x: ArrayView2<f64>| {
        let (v, d) = drift.eval_ode_with_divergence(s, x, Direction::Backward);
        // Backward divergence is -div v(1 - s); the integral wants +div.
        (v, -d)
    };
    for k in 0..steps {
        let s = k as f64 * h;
        let (k1, d1) = f(s, x.view());
        let (k2, d2) = f(s + 0.5 * h, (&x + &(&k1 * (0.5 * h))).view());
        let (k3, d3) = f(s + 0.5 * h, (&x + &(&k2 * (0.5 * h))).view());
        let (k4, d4) = f(s + h, (&x + &(&k3 * h)).view());
        x = &x + &((k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4) * (h / 6.0));
        l = &l + &((d1 + &(d2 * 2.0) + &(d3 * 2.0) + &d4) * (h / 6.0));
        retract_rows(&mut x)?;
    }
    Ok((x, l))
}
