//! Path samplers on S^n: deterministic flow (Euler, RK4), geodesic random
//! walk, and the embedded projection SDE (Euler-Maruyama, Euler-Heun), plus
//! the likelihood ODE.
//!
//! Paths are simulated in fixed chunks; path `i` draws its noise from stream
//! `i` of the run seed, so results do not depend on scheduling.

pub mod nll;

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::distributions::SampleSet;
use crate::error::{Error, Result};
use crate::fields::{Direction, Epsilon, PerturbedDrift, VectorField};
use crate::manifold::{sphere, Manifold, ManifoldPoint};
use crate::rng;

pub use nll::{nll_ode, NllConfig};

/// Paths advanced together as one batch.
pub const PATH_CHUNK: usize = 512;
/// GRW tangent steps at or beyond this norm reach the cut locus.
pub const GRW_CUT_TOL: f64 = 1e-9;
/// Norm a clamped GRW step is shortened to.
pub const GRW_CLAMP: f64 = PI - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    OdeEuler,
    OdeRk4,
    Grw,
    EsdeEm,
    EsdeHeun,
}

impl Scheme {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Scheme::Grw | Scheme::EsdeEm | Scheme::EsdeHeun)
    }

    pub const ALL: [Scheme; 5] = [
        Scheme::OdeEuler,
        Scheme::OdeRk4,
        Scheme::Grw,
        Scheme::EsdeEm,
        Scheme::EsdeHeun,
    ];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::OdeEuler => "ode-euler",
            Scheme::OdeRk4 => "ode-rk4",
            Scheme::Grw => "grw",
            Scheme::EsdeEm => "esde-em",
            Scheme::EsdeHeun => "esde-heun",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Config(format!("unknown direction '{other}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub scheme: Scheme,
    /// Number of steps N; `dt = 1 / N`.
    pub steps: usize,
    /// Diffusion level used by [`sample`]; ODE schemes force it to 0.
    pub epsilon: f64,
    pub seed: u64,
    pub direction: Direction,
    /// Keep every intermediate state.
    pub record: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::OdeRk4,
            steps: 100,
            epsilon: 0.0,
            seed: 0,
            direction: Direction::Forward,
            record: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// States of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Interpolant time of each state.
    pub times: Vec<f64>,
    /// One ambient row per time.
    pub states: Array2<f64>,
    /// Running `-int div` along the path, when a likelihood was integrated.
    pub logdet: Option<Vec<f64>>,
}

impl Trajectory {
    /// CSV with columns `t,c0,c1,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.states.ncols();
        let mut s = String::from("t");
        for j in 0..d {
            s.push_str(&format!(",c{j}"));
        }
        s.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t:?}"));
            for v in self.states.row(i) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: SampleSet,
    /// Scheme actually run (a stochastic scheme with zero diffusion runs as
    /// `ode-euler`).
    pub scheme: Scheme,
    /// Set when the requested scheme degraded to the ODE.
    pub degenerate_epsilon: bool,
    /// GRW steps shortened at the cut locus.
    pub clamped_steps: u64,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Builds the perturbed drift with `cfg.epsilon` (zero for ODE schemes) and
/// runs [`simulate`].
pub fn sample(
    velocity: &dyn VectorField,
    score: Option<&dyn VectorField>,
    x0: &SampleSet,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let eps = if cfg.scheme.is_stochastic() { cfg.epsilon } else { 0.0 };
    let drift = PerturbedDrift::new(velocity, score, Epsilon::Constant(eps))?;
    simulate(&drift, x0, cfg)
}

/// ODE flow of the drift's velocity; any score is ignored.
pub fn ode_sample(drift: &PerturbedDrift, x0: &SampleSet, cfg: &SamplerConfig) -> Result<SampleOutput> {
    if cfg.scheme.is_stochastic() {
        return Err(Error::Config(format!("ode_sample given scheme {}", cfg.scheme)));
    }
    simulate(drift, x0, cfg)
}

/// Embedded projection SDE, Euler-Maruyama or Euler-Heun.
pub fn esde_sample(drift: &PerturbedDrift, x0: &SampleSet, cfg: &SamplerConfig) -> Result<SampleOutput> {
    if !matches!(cfg.scheme, Scheme::EsdeEm | Scheme::EsdeHeun) {
        return Err(Error::Config(format!("esde_sample given scheme {}", cfg.scheme)));
    }
    simulate(drift, x0, cfg)
}

/// Integrates `x0` over `[0, 1]` with the drift's own diffusion level.
pub fn simulate(drift: &PerturbedDrift, x0: &SampleSet, cfg: &SamplerConfig) -> Result<SampleOutput> {
    cfg.validate()?;
    let m = x0.manifold();
    if !matches!(m, Manifold::Sphere(_)) {
        return Err(Error::Config(format!(
            "samplers run on spheres, got {m}; route so3 through s5"
        )));
    }
    if drift.manifold() != m {
        return Err(Error::Config(format!(
            "drift on {} but start points on {m}",
            drift.manifold()
        )));
    }
    let degenerate = cfg.scheme.is_stochastic() && drift.epsilon.is_zero();
    let scheme = if degenerate { Scheme::OdeEuler } else { cfg.scheme };
    let ode_drift;
    let drift = if scheme.is_stochastic() {
        drift
    } else {
        ode_drift = PerturbedDrift::deterministic(drift.velocity);
        &ode_drift
    };
    let n = x0.len();
    let d = m.ambient_dim();
    let starts: Vec<usize> = (0..n).step_by(PATH_CHUNK).collect();
    let parts: Vec<Result<ChunkOut>> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + PATH_CHUNK).min(n);
            let x = x0.points().slice(s![lo..hi, ..]).to_owned();
            run_chunk(drift, scheme, x, lo, cfg)
        })
        .collect();
    let mut out = Array2::zeros((n, d));
    let mut clamped = 0;
    let mut trajectories = cfg.record.then(Vec::new);
    for (&lo, part) in starts.iter().zip(parts) {
        let part = part?;
        out.slice_mut(s![lo..lo + part.x.nrows(), ..]).assign(&part.x);
        clamped += part.clamped;
        if let (Some(all), Some(tr)) = (trajectories.as_mut(), part.trajectories) {
            all.extend(tr);
        }
    }
    let samples = SampleSet::from_raw(m, out, cfg.seed, format!("{scheme}-n{}-{}", cfg.steps, cfg.direction));
    Ok(SampleOutput {
        samples,
        scheme,
        degenerate_epsilon: degenerate,
        clamped_steps: clamped,
        trajectories,
    })
}

struct ChunkOut {
    x: Array2<f64>,
    clamped: u64,
    trajectories: Option<Vec<Trajectory>>,
}

fn physical_time(s: f64, dir: Direction) -> f64 {
    match dir {
        Direction::Forward => s,
        Direction::Backward => 1.0 - s,
    }
}

fn run_chunk(
    drift: &PerturbedDrift,
    scheme: Scheme,
    mut x: Array2<f64>,
    first_path: usize,
    cfg: &SamplerConfig,
) -> Result<ChunkOut> {
    let (b, d) = x.dim();
    let dt = 1.0 / cfg.steps as f64;
    let dir = cfg.direction;
    let mut rngs: Vec<rng::Rng> = (0..b).map(|i| rng::stream(cfg.seed, (first_path + i) as u64)).collect();
    let mut noise = Array2::zeros((b, d));
    let mut clamped = 0;
    let mut rec: Option<Vec<Array2<f64>>> = cfg.record.then(|| vec![x.clone()]);
    for k in 0..cfg.steps {
        let s = k as f64 * dt;
        if scheme.is_stochastic() {
            for (r, mut row) in rngs.iter_mut().zip(noise.outer_iter_mut()) {
                rng::fill_normal(r, row.as_slice_mut().unwrap());
            }
            noise *= dt.sqrt();
        }
        x = match scheme {
            Scheme::OdeEuler => euler_step(drift, s, dt, x.view(), dir)?,
            Scheme::OdeRk4 => rk4_step(drift, s, dt, x.view(), dir)?,
            Scheme::Grw => {
                let (y, c) = grw_batch(drift, s, dt, x.view(), noise.view(), dir);
                clamped += c;
                y
            }
            Scheme::EsdeEm => esde_em_step(drift, s, dt, x.view(), noise.view(), dir)?,
            Scheme::EsdeHeun => esde_heun_step(drift, s, dt, x.view(), noise.view(), dir)?,
        };
        if let Some(r) = rec.as_mut() {
            r.push(x.clone());
        }
    }
    let trajectories = rec.map(|states| {
        let times: Vec<f64> = (0..=cfg.steps).map(|k| physical_time(k as f64 * dt, dir)).collect();
        (0..b)
            .map(|i| {
                let mut st = Array2::zeros((states.len(), d));
                for (k, a) in states.iter().enumerate() {
                    st.row_mut(k).assign(&a.row(i));
                }
                Trajectory {
                    times: times.clone(),
                    states: st,
                    logdet: None,
                }
            })
            .collect()
    });
    Ok(ChunkOut {
        x,
        clamped,
        trajectories,
    })
}

pub(crate) fn retract_rows(x: &mut Array2<f64>) -> Result<()> {
    for mut row in x.outer_iter_mut() {
        sphere::normalize(row.as_slice_mut().unwrap())?;
    }
    Ok(())
}

fn euler_step(drift: &PerturbedDrift, s: f64, dt: f64, x: ArrayView2<f64>, dir: Direction) -> Result<Array2<f64>> {
    let v = drift.eval(s, x, dir);
    let mut y = &x + &(v * dt);
    retract_rows(&mut y)?;
    Ok(y)
}

/// Classical four-stage Runge-Kutta in ambient coordinates, then retraction.
fn rk4_step(drift: &PerturbedDrift, s: f64, dt: f64, x: ArrayView2<f64>, dir: Direction) -> Result<Array2<f64>> {
    let h = dt;
    let k1 = drift.eval(s, x, dir);
    let k2 = drift.eval(s + 0.5 * h, (&x + &(&k1 * (0.5 * h))).view(), dir);
    let k3 = drift.eval(s + 0.5 * h, (&x + &(&k2 * (0.5 * h))).view(), dir);
    let k4 = drift.eval(s + h, (&x + &(&k3 * h)).view(), dir);
    let mut y = &x + &((k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4) * (h / 6.0));
    retract_rows(&mut y)?;
    Ok(y)
}

/// GRW update of one point: `Exp_x(v dt + sqrt(2 eps) P_x dW)`, with the
/// tangent step clamped below the cut locus. Returns whether it was clamped.
pub fn grw_update(x: &[f64], v: &[f64], dw: &[f64], eps: f64, dt: f64, out: &mut [f64]) -> bool {
    let d = x.len();
    let sig = (2.0 * eps).sqrt();
    let mut step = vec![0.0; d];
    let mut z = dw.to_vec();
    sphere::project(x, &mut z);
    for i in 0..d {
        step[i] = v[i] * dt + sig * z[i];
    }
    let norm = sphere::norm(&step);
    let clamped = norm >= PI - GRW_CUT_TOL;
    if clamped {
        let k = GRW_CLAMP / norm;
        step.iter_mut().for_each(|a| *a *= k);
    }
    sphere::exp_into(x, &step, out);
    clamped
}

fn grw_batch(
    drift: &PerturbedDrift,
    s: f64,
    dt: f64,
    x: ArrayView2<f64>,
    dw: ArrayView2<f64>,
    dir: Direction,
) -> (Array2<f64>, u64) {
    let v = drift.eval(s, x, dir);
    let eps = drift.epsilon_at(s, dir);
    let mut y = Array2::zeros(x.dim());
    let mut clamped = 0;
    for i in 0..x.nrows() {
        let c = grw_update(
            x.row(i).as_slice().unwrap(),
            v.row(i).as_slice().unwrap(),
            dw.row(i).as_slice().unwrap(),
            eps,
            dt,
            y.row_mut(i).into_slice().unwrap(),
        );
        clamped += c as u64;
    }
    (y, clamped)
}

/// One geodesic random walk step from a single point with a fresh tangent
/// Gaussian. Returns the new point and whether the step was clamped.
pub fn grw_step(
    drift: &PerturbedDrift,
    t: f64,
    x: &ManifoldPoint,
    dt: f64,
    r: &mut rng::Rng,
) -> Result<(ManifoldPoint, bool)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if x.manifold() != drift.manifold() || !matches!(x.manifold(), Manifold::Sphere(_)) {
        return Err(Error::Config(format!(
            "grw on {} given a point of {}",
            drift.manifold(),
            x.manifold()
        )));
    }
    let xv = x.ambient();
    let d = xv.len();
    let v = drift.eval(t, ArrayView2::from_shape((1, d), &xv).unwrap(), Direction::Forward);
    let mut dw = vec![0.0; d];
    rng::fill_normal(r, &mut dw);
    dw.iter_mut().for_each(|a| *a *= dt.sqrt());
    let mut out = vec![0.0; d];
    let clamped = grw_update(
        &xv,
        v.row(0).as_slice().unwrap(),
        &dw,
        drift.epsilon.at(t),
        dt,
        &mut out,
    );
    Ok((ManifoldPoint::from_ambient(x.manifold(), &out)?, clamped))
}

/// `P(x) dW` for every row, with `P(x) = I - x x^T` (no normalization of `x`).
fn project_noise(x: ArrayView2<f64>, dw: ArrayView2<f64>) -> Array2<f64> {
    let mut out = dw.to_owned();
    for (xr, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
        sphere::project(xr.as_slice().unwrap(), o.as_slice_mut().unwrap());
    }
    out
}

/// Ito form of the projection SDE: the Stratonovich correction of
/// `P(X) o dW` on S^n is the drift `-eps n X`.
pub(crate) fn esde_em_step(
    drift: &PerturbedDrift,
    s: f64,
    dt: f64,
    x: ArrayView2<f64>,
    dw: ArrayView2<f64>,
    dir: Direction,
) -> Result<Array2<f64>> {
    let n = (x.ncols() - 1) as f64;
    let eps = drift.epsilon_at(s, dir);
    let v = drift.eval(s, x, dir);
    let pdw = project_noise(x, dw);
    let mut y = &x + &(v * dt) + &(pdw * (2.0 * eps).sqrt());
    y.scaled_add(-eps * n * dt, &x);
    retract_rows(&mut y)?;
    Ok(y)
}

/// Stratonovich Euler-Heun: Euler drift, diffusion coefficient averaged
/// between the current point and a predictor.
pub(crate) fn esde_heun_step(
    drift: &PerturbedDrift,
    s: f64,
    dt: f64,
    x: ArrayView2<f64>,
    dw: ArrayView2<f64>,
    dir: Direction,
) -> Result<Array2<f64>> {
    let sig = (2.0 * drift.epsilon_at(s, dir)).sqrt();
    let v = drift.eval(s, x, dir);
    let g0 = project_noise(x, dw);
    let pred = &x + &(&v * dt) + &(&g0 * sig);
    let g1 = project_noise(pred.view(), dw);
    let mut y = &x + &(v * dt) + &((g0 + g1) * (0.5 * sig));
    retract_rows(&mut y)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_uniform;
    use crate::fields::{RotationField, ZeroField};
    use approx::assert_abs_diff_eq;

    fn point_set(rows: &[[f64; 3]]) -> SampleSet {
        let a = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
        SampleSet::new(Manifold::S2, a, 0, "test").unwrap()
    }

    #[test]
    fn tags_round_trip() {
        for k in Scheme::ALL {
            assert_eq!(k.to_string().parse::<Scheme>().unwrap(), k);
        }
        assert!("milstein".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_drift_zero_noise_is_identity() {
        let x0 = sample_uniform(Manifold::S2, 100, 1).unwrap();
        let z = ZeroField(Manifold::S2);
        for scheme in Scheme::ALL {
            let cfg = SamplerConfig {
                scheme,
                steps: 7,
                ..Default::default()
            };
            let out = sample(&z, None, &x0, &cfg).unwrap();
            assert_abs_diff_eq!(out.samples.points(), x0.points(), epsilon = 1e-15);
            assert_eq!(out.degenerate_epsilon, scheme.is_stochastic());
        }
    }

    #[test]
    fn stochastic_with_zero_epsilon_equals_ode_euler_bitwise() {
        let x0 = sample_uniform(Manifold::S2, 300, 2).unwrap();
        let f = RotationField::new([0.3, -0.2, 0.9]);
        let ode = sample(
            &f,
            None,
            &x0,
            &SamplerConfig {
                scheme: Scheme::OdeEuler,
                steps: 50,
                ..Default::default()
            },
        )
        .unwrap();
        for scheme in [Scheme::Grw, Scheme::EsdeEm, Scheme::EsdeHeun] {
            let cfg = SamplerConfig {
                scheme,
                steps: 50,
                seed: 9,
                ..Default::default()
            };
            let out = sample(&f, None, &x0, &cfg).unwrap();
            assert!(out.degenerate_epsilon);
            assert_eq!(out.samples.points(), ode.samples.points());
        }
    }

    #[test]
    fn grw_step_with_geodesic_field_moves_exactly() {
        let f = RotationField::new([0.0, 0.0, 0.8]);
        let drift = PerturbedDrift::deterministic(&f);
        let x = ManifoldPoint::from_ambient(Manifold::S2, &[1.0, 0.0, 0.0]).unwrap();
        let (y, c) = grw_step(&drift, 0.0, &x, 0.25, &mut rng::stream(1, 0)).unwrap();
        assert!(!c);
        assert_abs_diff_eq!(x.distance(&y).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn grw_clamps_long_steps() {
        let mut out = [0.0; 3];
        let c = grw_update(&[1.0, 0.0, 0.0], &[0.0, 4.0, 0.0], &[0.0; 3], 0.0, 1.0, &mut out);
        assert!(c);
        assert_abs_diff_eq!(sphere::distance(&[1.0, 0.0, 0.0], &out), GRW_CLAMP, epsilon = 1e-9);
    }

    #[test]
    fn rk4_follows_geodesic_field() {
        let a = [0.48, 0.6, 0.64];
        let b = [0.0, -0.6, 0.8];
        let f = RotationField::geodesic(&a, &b);
        let x0 = point_set(&[a]);
        let cfg = SamplerConfig {
            scheme: Scheme::OdeRk4,
            steps: 100,
            ..Default::default()
        };
        let out = sample(&f, None, &x0, &cfg).unwrap();
        assert!(sphere::distance(out.samples.row(0), &b) <= 1e-6);
        let back = sample(
            &f,
            None,
            &out.samples,
            &SamplerConfig {
                direction: Direction::Backward,
                ..cfg
            },
        )
        .unwrap();
        assert!(sphere::distance(back.samples.row(0), &a) <= 1e-6);
    }

    #[test]
    fn sampling_is_deterministic_and_records() {
        let x0 = sample_uniform(Manifold::S2, 600, 3).unwrap();
        let z = ZeroField(Manifold::S2);
        let cfg = SamplerConfig {
            scheme: Scheme::EsdeHeun,
            steps: 10,
            epsilon: 0.3,
            seed: 5,
            record: true,
            ..Default::default()
        };
        let a = sample(&z, None, &x0, &cfg).unwrap();
        let b = sample(&z, None, &x0, &cfg).unwrap();
        assert_eq!(a, b);
        let tr = a.trajectories.unwrap();
        assert_eq!(tr.len(), 600);
        assert_eq!(tr[0].states.nrows(), 11);
        assert_eq!(tr[599].states.row(10), a.samples.points().row(599));
    }

    #[test]
    fn rejects_so3_and_bad_config() {
        let x0 = sample_uniform(Manifold::So3, 3, 1).unwrap();
        let z = ZeroField(Manifold::So3);
        assert_eq!(
            sample(&z, None, &x0, &SamplerConfig::default()).unwrap_err().class(),
            "ConfigError"
        );
        let x0 = sample_uniform(Manifold::S2, 3, 1).unwrap();
        let z = ZeroField(Manifold::S2);
        let cfg = SamplerConfig {
            steps: 0,
            ..Default::default()
        };
        assert_eq!(sample(&z, None, &x0, &cfg).unwrap_err().class(), "ConfigError");
    }

    #[test]
    fn brownian_first_moment_small_scale() {
        // E<X_1, x0> = exp(-eps n) for generator eps * Laplacian; coarse check.
        let x0 = point_set(&[[0.0, 0.0, 1.0]; 20_000]);
        let z = ZeroField(Manifold::S2);
        for scheme in [Scheme::Grw, Scheme::EsdeEm, Scheme::EsdeHeun] {
            let cfg = SamplerConfig {
                scheme,
                steps: 50,
                epsilon: 0.5,
                seed: 1,
                ..Default::default()
            };
            let out = sample(&z, None, &x0, &cfg).unwrap();
            let m: f64 = (0..out.samples.len()).map(|i| out.samples.row(i)[2]).sum::<f64>() / 20_000.0;
            assert!((m - (-1.0f64).exp()).abs() < 0.03, "{scheme}: {m}");
        }
    }
}
