//! Perturbed drift `v + eps s` of the sampling SDE.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};

use super::VectorField;
use crate::error::{Error, Result};
use crate::manifold::Manifold;

/// Diffusion level: a constant or a user-supplied function of time.
#[derive(Clone)]
pub enum Epsilon {
    Constant(f64),
    Schedule(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Epsilon {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Epsilon::Constant(e) => *e,
            Epsilon::Schedule(f) => f(t),
        }
    }

    /// Only a constant zero counts; schedules are assumed to be active.
    pub fn is_zero(&self) -> bool {
        matches!(self, Epsilon::Constant(e) if *e == 0.0)
    }
}

impl fmt::Debug for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Constant(e) => write!(f, "Constant({e})"),
            Epsilon::Schedule(_) => f.write_str("Schedule(..)"),
        }
    }
}

impl From<f64> for Epsilon {
    fn from(e: f64) -> Self {
        Epsilon::Constant(e)
    }
}

/// Time direction of a sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// From the t = 0 law to the t = 1 law.
    #[default]
    Forward,
    /// From the t = 1 law back to t = 0: integration time `s` runs over
    /// `[0, 1]` with the fields read at `1 - s`.
    Backward,
}

/// `v_F = v + eps(t) s`. A missing score contributes nothing, and with a
/// constant zero epsilon the score is never evaluated.
pub struct PerturbedDrift<'a> {
    pub velocity: &'a dyn VectorField,
    pub score: Option<&'a dyn VectorField>,
    pub epsilon: Epsilon,
}

impl<'a> PerturbedDrift<'a> {
    pub fn new(velocity: &'a dyn VectorField, score: Option<&'a dyn VectorField>, epsilon: Epsilon) -> Result<Self> {
        if let Epsilon::Constant(e) = epsilon {
            if !(e >= 0.0) {
                return Err(Error::Config(format!("epsilon must be >= 0, got {e}")));
            }
        }
        if let Some(s) = score {
            if s.manifold() != velocity.manifold() {
                return Err(Error::Config(format!(
                    "velocity on {} but score on {}",
                    velocity.manifold(),
                    s.manifold()
                )));
            }
        }
        Ok(Self {
            velocity,
            score,
            epsilon,
        })
    }

    /// Drift without perturbation.
    pub fn deterministic(velocity: &'a dyn VectorField) -> Self {
        Self {
            velocity,
            score: None,
            epsilon: Epsilon::Constant(0.0),
        }
    }

    pub fn manifold(&self) -> Manifold {
        self.velocity.manifold()
    }

    /// Diffusion level at integration time `s` in the given direction.
    pub fn epsilon_at(&self, s: f64, dir: Direction) -> f64 {
        match dir {
            Direction::Forward => self.epsilon.at(s),
            Direction::Backward => self.epsilon.at(1.0 - s),
        }
    }

    /// Forward: `v(s) + eps s(s)`. Backward: `-v(1-s) + eps s(1-s)`, the
    /// drift of the time-reversed process.
    pub fn eval(&self, s: f64, x: ArrayView2<f64>, dir: Direction) -> Array2<f64> {
        let (t, sign) = match dir {
            Direction::Forward => (s, 1.0),
            Direction::Backward => (1.0 - s, -1.0),
        };
        let mut v = self.velocity.eval(t, x);
        if sign < 0.0 {
            v.mapv_inplace(|a| -a);
        }
        if let (Some(score), false) = (self.score, self.epsilon.is_zero()) {
            let e = self.epsilon.at(t);
            if e != 0.0 {
                v.scaled_add(e, &score.eval(t, x));
            }
        }
        v
    }

    /// Velocity drift and its divergence in the given direction (the score
    /// term is not part of the probability-flow ODE).
    pub fn eval_ode_with_divergence(&self, s: f64, x: ArrayView2<f64>, dir: Direction) -> (Array2<f64>, Array1<f64>) {
        match dir {
            Direction::Forward => self.velocity.eval_with_divergence(s, x),
            Direction::Backward => {
                let (v, d) = self.velocity.eval_with_divergence(1.0 - s, x);
                (-v, -d)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::analytic::{ProjectedConstantField, RotationField};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_epsilon_is_velocity_exactly() {
        let v = RotationField::new([0.1, 0.2, 0.3]);
        let s = ProjectedConstantField { c: vec![f64::NAN; 3] };
        let d = PerturbedDrift::new(&v, Some(&s), Epsilon::Constant(0.0)).unwrap();
        let x = ndarray::arr2(&[[0.0, 0.6, 0.8]]);
        assert_eq!(d.eval(0.3, x.view(), Direction::Forward), v.eval(0.3, x.view()));
    }

    #[test]
    fn perturbed_and_backward() {
        let v = RotationField::new([0.0, 0.0, 1.0]);
        let s = ProjectedConstantField { c: vec![1.0, 0.0, 0.0] };
        let d = PerturbedDrift::new(&v, Some(&s), 0.5.into()).unwrap();
        let x = ndarray::arr2(&[[0.0, 0.0, 1.0]]);
        let f = d.eval(0.2, x.view(), Direction::Forward);
        assert_abs_diff_eq!(f.row(0).to_vec().as_slice(), &[0.5, 0.0, 0.0][..], epsilon = 1e-15);
        let x = ndarray::arr2(&[[1.0, 0.0, 0.0]]);
        let b = d.eval(0.2, x.view(), Direction::Backward);
        assert_abs_diff_eq!(b.row(0).to_vec().as_slice(), &[0.0, -1.0, 0.0][..], epsilon = 1e-15);
        assert!(PerturbedDrift::new(&v, None, (-1.0).into()).is_err());
        let sched = PerturbedDrift::new(&v, None, Epsilon::Schedule(Arc::new(|t| t))).unwrap();
        assert_eq!(sched.epsilon_at(0.25, Direction::Backward), 0.75);
    }
}
