//! Geodesic interpolants between distributions on S^n and SO(3).
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod distributions;
pub mod error;
pub mod eval;
pub mod fields;
pub mod interpolant;
pub mod manifold;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
pub use manifold::{Manifold, ManifoldPoint, TangentVector};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
