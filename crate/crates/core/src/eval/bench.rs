//! Empirical convergence orders of the stochastic schemes for Brownian
//! motion on S^2 started at the north pole.
//!
//! E-SDE schemes are scored by strong error against an Euler-Heun reference
//! 8x finer than the finest level, driven by the same Brownian increments.
//! GRW draws intrinsic Gaussians that cannot be coupled across step sizes, so
//! it is scored by weak error of the first moment against `exp(-eps n)`.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::distributions::SampleSet;
use crate::error::{Error, Result};
use crate::fields::{Direction, Epsilon, PerturbedDrift, ZeroField};
use crate::manifold::Manifold;
use crate::rng;
use crate::samplers::{esde_em_step, esde_heun_step, simulate, SamplerConfig, Scheme, PATH_CHUNK};

/// Minimum number of step levels.
pub const MIN_LEVELS: usize = 4;
/// Minimum number of paths per level.
pub const MIN_PATHS: usize = 10_000;
/// Reference refinement relative to the finest level.
pub const REFERENCE_FACTOR: usize = 8;

const NORTH: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Strong,
    Weak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeCurve {
    pub scheme: Scheme,
    pub kind: ErrorKind,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub epsilon: f64,
    pub paths: usize,
    pub seed: u64,
    pub curves: Vec<SchemeCurve>,
}

impl BenchReport {
    pub fn slopes(&self) -> BTreeMap<String, f64> {
        self.curves.iter().map(|c| (c.scheme.to_string(), c.slope)).collect()
    }

    pub fn curve(&self, scheme: Scheme) -> Option<&SchemeCurve> {
        self.curves.iter().find(|c| c.scheme == scheme)
    }

    /// CSV rows `scheme,kind,dt,error`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("scheme,kind,dt,error\n");
        for c in &self.curves {
            let kind = match c.kind {
                ErrorKind::Strong => "strong",
                ErrorKind::Weak => "weak",
            };
            for (dt, e) in c.dts.iter().zip(&c.errors) {
                s.push_str(&format!("{},{kind},{dt:?},{e:?}\n", c.scheme));
            }
        }
        s
    }
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn log_slope(dts: &[f64], errors: &[f64]) -> f64 {
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    fit_slope(&x, &y)
}

/// `steps` are step counts; each must double the previous one so that `dt`
/// halves from level to level.
pub fn convergence_bench(
    schemes: &[Scheme],
    epsilon: f64,
    steps: &[usize],
    paths: usize,
    seed: u64,
) -> Result<BenchReport> {
    if steps.len() < MIN_LEVELS {
        return Err(Error::Config(format!(
            "convergence bench needs at least {MIN_LEVELS} step levels, got {}",
            steps.len()
        )));
    }
    if steps[0] == 0 || steps.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::Config(format!(
            "step counts must double from level to level, got {steps:?}"
        )));
    }
    if paths < MIN_PATHS {
        return Err(Error::Config(format!(
            "convergence bench needs at least {MIN_PATHS} paths, got {paths}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!(
            "convergence bench needs epsilon > 0, got {epsilon}"
        )));
    }
    if schemes.is_empty() {
        return Err(Error::Config("convergence bench needs at least one scheme".into()));
    }
    if let Some(s) = schemes.iter().find(|s| !s.is_stochastic()) {
        return Err(Error::Config(format!(
            "scheme {s} has no discretization error to benchmark"
        )));
    }
    let dts: Vec<f64> = steps.iter().map(|&n| 1.0 / n as f64).collect();
    let esde: Vec<Scheme> = schemes
        .iter()
        .copied()
        .filter(|s| matches!(s, Scheme::EsdeEm | Scheme::EsdeHeun))
        .collect();
    let mut strong = if esde.is_empty() {
        BTreeMap::new()
    } else {
        strong_errors(&esde, epsilon, steps, paths, seed)?
    };
    let mut curves = Vec::new();
    for &scheme in schemes {
        let errors = match scheme {
            Scheme::Grw => grw_weak_errors(epsilon, steps, paths, seed)?,
            _ => strong.remove(&scheme).unwrap_or_default(),
        };
        if errors.is_empty() {
            // Listed twice; the first entry already holds the curve.
            continue;
        }
        curves.push(SchemeCurve {
            scheme,
            kind: if scheme == Scheme::Grw {
                ErrorKind::Weak
            } else {
                ErrorKind::Strong
            },
            slope: log_slope(&dts, &errors),
            dts: dts.clone(),
            errors,
        });
    }
    Ok(BenchReport {
        epsilon,
        paths,
        seed,
        curves,
    })
}

fn grw_weak_errors(epsilon: f64, steps: &[usize], paths: usize, seed: u64) -> Result<Vec<f64>> {
    let field = ZeroField(Manifold::S2);
    let drift = PerturbedDrift::new(&field, None, Epsilon::Constant(epsilon))?;
    let x0 = north_poles(paths);
    let exact = (-epsilon * 2.0).exp();
    steps
        .iter()
        .map(|&n| {
            let cfg = SamplerConfig {
                scheme: Scheme::Grw,
                steps: n,
                epsilon,
                seed: rng::derive(seed, &format!("bench-grw-{n}")),
                ..Default::default()
            };
            let out = simulate(&drift, &x0, &cfg)?;
            let m = out.samples.points().column(2).mean().unwrap();
            Ok((m - exact).abs())
        })
        .collect()
}

fn north_poles(paths: usize) -> SampleSet {
    let pts = Array2::from_shape_fn((paths, 3), |(_, j)| NORTH[j]);
    SampleSet::new(Manifold::S2, pts, 0, "north-pole").unwrap()
}

/// Mean `|X^dt - X^ref|` for each scheme and level.
fn strong_errors(
    schemes: &[Scheme],
    epsilon: f64,
    steps: &[usize],
    paths: usize,
    seed: u64,
) -> Result<BTreeMap<Scheme, Vec<f64>>> {
    let field = ZeroField(Manifold::S2);
    let drift = PerturbedDrift::new(&field, None, Epsilon::Constant(epsilon))?;
    let stream_seed = rng::derive(seed, "bench-esde");
    let starts: Vec<usize> = (0..paths).step_by(PATH_CHUNK).collect();
    let sums: Vec<Result<Array2<f64>>> = starts
        .par_iter()
        .map(|&lo| {
            let b = (lo + PATH_CHUNK).min(paths) - lo;
            strong_chunk(&drift, schemes, steps, stream_seed, lo, b)
        })
        .collect();
    let mut total = Array2::<f64>::zeros((schemes.len(), steps.len()));
    for s in sums {
        total += &s?;
    }
    total /= paths as f64;
    Ok(schemes
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, total.row(k).to_vec()))
        .collect())
}

/// Summed strong errors of one chunk, indexed `[scheme, level]`.
fn strong_chunk(
    drift: &PerturbedDrift,
    schemes: &[Scheme],
    steps: &[usize],
    stream_seed: u64,
    first_path: usize,
    b: usize,
) -> Result<Array2<f64>> {
    let n_ref = REFERENCE_FACTOR * steps[steps.len() - 1];
    let dt_ref = 1.0 / n_ref as f64;
    let start = Array2::from_shape_fn((b, 3), |(_, j)| NORTH[j]);
    let mut rngs: Vec<rng::Rng> = (0..b)
        .map(|i| rng::stream(stream_seed, (first_path + i) as u64))
        .collect();
    let mut reference = start.clone();
    let mut states = vec![vec![start.clone(); steps.len()]; schemes.len()];
    let mut acc = vec![Array2::<f64>::zeros((b, 3)); steps.len()];
    let mut dw = Array2::<f64>::zeros((b, 3));
    for j in 0..n_ref {
        for (r, mut row) in rngs.iter_mut().zip(dw.outer_iter_mut()) {
            rng::fill_normal(r, row.as_slice_mut().unwrap());
        }
        dw *= dt_ref.sqrt();
        let s = j as f64 * dt_ref;
        reference = esde_heun_step(drift, s, dt_ref, reference.view(), dw.view(), Direction::Forward)?;
        for (l, &n) in steps.iter().enumerate() {
            acc[l] += &dw;
            let stride = n_ref / n;
            if (j + 1) % stride != 0 {
                continue;
            }
            let dt = 1.0 / n as f64;
            let t = ((j + 1) / stride - 1) as f64 * dt;
            for (k, &scheme) in schemes.iter().enumerate() {
                let x = states[k][l].view();
                states[k][l] = match scheme {
                    Scheme::EsdeEm => esde_em_step(drift, t, dt, x, acc[l].view(), Direction::Forward)?,
                    _ => esde_heun_step(drift, t, dt, x, acc[l].view(), Direction::Forward)?,
                };
            }
            acc[l].fill(0.0);
        }
    }
    let mut out = Array2::zeros((schemes.len(), steps.len()));
    for k in 0..schemes.len() {
        for l in 0..steps.len() {
            let diff = &states[k][l] - &reference;
            out[[k, l]] = diff.map_axis(Axis(1), |r| r.dot(&r).sqrt()).sum();
        }
    }
    Ok(out)
}
