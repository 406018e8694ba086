//! Neural and analytic tangent vector fields, their losses and training.

pub mod analytic;
pub mod checkpoint;
pub mod drift;
pub mod loss;
pub mod net;
pub mod optim;
pub mod train;

use ndarray::{Array1, Array2, ArrayView2};

use crate::manifold::Manifold;

pub use analytic::{LinearField, ProjectedConstantField, RotationField, ZeroField};
pub use drift::{Direction, Epsilon, PerturbedDrift};
pub use loss::{field_eval, score_loss_ism, velocity_loss};
pub use net::{Activation, FieldNet};
pub use optim::{AdamW, StepLr};
pub use train::{train, TraceEntry, TrainConfig, TrainReport};

/// A time-dependent tangent field on a sphere, evaluated on batches of points
/// (one ambient row each).
pub trait VectorField: Sync {
    fn manifold(&self) -> Manifold;

    /// Tangent field values at every row of `x`.
    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Array2<f64>;

    /// Field values together with their manifold divergence.
    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>);
}

impl VectorField for FieldNet {
    fn manifold(&self) -> Manifold {
        FieldNet::manifold(self)
    }

    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        self.field(t, x)
    }

    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        self.field_and_divergence(t, x)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn manifold(&self) -> Manifold {
        (**self).manifold()
    }

    fn eval(&self, t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        (**self).eval(t, x)
    }

    fn eval_with_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        (**self).eval_with_divergence(t, x)
    }
}
