//! Priors, synthetic targets, geographic ingestion and closed-form densities.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{embed6, retract, so3, sphere, Manifold, ManifoldPoint, Rotation};
use crate::rng;

/// Rows generated from one random stream. Fixed, so output does not depend on
/// the number of worker threads.
pub const CHUNK: usize = 1024;

/// Tolerated deviation from the manifold when building a [`SampleSet`] from
/// external coordinates; such points are retracted.
pub const INGEST_TOL: f64 = 1e-6;

/// A set of points on one manifold, one row of ambient coordinates per point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    manifold: Manifold,
    points: Array2<f64>,
    seed: u64,
    source: String,
}

impl SampleSet {
    /// Validates every row. Rows off the manifold by more than the point
    /// invariants allow, but within [`INGEST_TOL`], are retracted onto it.
    pub fn new(manifold: Manifold, mut points: Array2<f64>, seed: u64, source: impl Into<String>) -> Result<Self> {
        if points.ncols() != manifold.ambient_dim() {
            return Err(Error::InvalidArgument(format!(
                "{manifold} needs {} columns, got {}",
                manifold.ambient_dim(),
                points.ncols()
            )));
        }
        for (i, mut row) in points.axis_iter_mut(Axis(0)).enumerate() {
            let x = row.to_vec();
            let off = manifold_offset(manifold, &x);
            if !(off <= INGEST_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "point {i} is {off:e} away from {manifold}"
                )));
            }
            if off > on_manifold_tol(manifold) {
                let p = retract(manifold, &x)?;
                row.assign(&ArrayView1::from(&p.ambient()));
            }
        }
        Ok(Self::from_raw(manifold, points, seed, source))
    }

    /// Rows are trusted to be on the manifold already.
    pub(crate) fn from_raw(manifold: Manifold, points: Array2<f64>, seed: u64, source: impl Into<String>) -> Self {
        debug_assert_eq!(points.ncols(), manifold.ambient_dim());
        let points = points.as_standard_layout().into_owned();
        Self {
            manifold,
            points,
            seed,
            source: source.into(),
        }
    }

    pub fn from_points(points: &[ManifoldPoint], seed: u64, source: &str) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::Size("empty point list".into()))?;
        let m = first.manifold();
        let d = m.ambient_dim();
        let mut a = Array2::zeros((points.len(), d));
        for (i, p) in points.iter().enumerate() {
            if p.manifold() != m {
                return Err(Error::InvalidArgument("mixed manifolds in point list".into()));
            }
            a.row_mut(i).assign(&ArrayView1::from(&p.ambient()));
        }
        Ok(Self::from_raw(m, a, seed, source))
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Ambient coordinates of point `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.points.ncols();
        &self.points.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn point(&self, i: usize) -> ManifoldPoint {
        ManifoldPoint::from_ambient(self.manifold, self.row(i)).expect("validated row")
    }

    /// `n` distinct rows chosen uniformly without replacement (all rows, in
    /// order, when `n >= len`).
    pub fn subsample(&self, n: usize, seed: u64) -> SampleSet {
        if n >= self.len() {
            return self.clone();
        }
        let mut r = rng::stream(seed, 0);
        let idx = rand::seq::index::sample(&mut r, self.len(), n).into_vec();
        let pts = self.points.select(Axis(0), &idx);
        Self::from_raw(self.manifold, pts, seed, format!("{}[subsample {n}]", self.source))
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> SampleSet {
        let n = n.min(self.len());
        let pts = self.points.slice(ndarray::s![..n, ..]).to_owned();
        Self::from_raw(self.manifold, pts, self.seed, self.source.clone())
    }

    /// SO(3) points mapped to unit 6-vectors on S^5 by scaled truncation.
    pub fn to_s5(&self) -> Result<SampleSet> {
        if self.manifold != Manifold::So3 {
            return Err(Error::InvalidArgument(format!(
                "to_s5 needs so3 samples, got {}",
                self.manifold
            )));
        }
        let mut out = Array2::zeros((self.len(), 6));
        for i in 0..self.len() {
            let r = Rotation::from_matrix_unchecked(Matrix3::from_row_slice(self.row(i)));
            out.row_mut(i)
                .assign(&ArrayView1::from(&embed6::rotation_to_sphere(&r)));
        }
        Ok(Self::from_raw(Manifold::S5, out, self.seed, self.source.clone()))
    }

    /// S^5 points (or any non-degenerate 6-vectors) mapped back to rotations.
    pub fn s5_to_so3(&self) -> Result<SampleSet> {
        if self.manifold != Manifold::S5 {
            return Err(Error::InvalidArgument(format!(
                "s5_to_so3 needs s5 samples, got {}",
                self.manifold
            )));
        }
        let mut out = Array2::zeros((self.len(), 9));
        for i in 0..self.len() {
            let r = embed6::sphere_to_rotation(self.row(i))?;
            out.row_mut(i).assign(&ArrayView1::from(&r.to_row_major()));
        }
        Ok(Self::from_raw(Manifold::So3, out, self.seed, self.source.clone()))
    }

    /// CSV with header `c0,c1,...` and one point per line.
    pub fn to_csv_string(&self) -> String {
        let d = self.points.ncols();
        let mut s = String::with_capacity(self.len() * d * 24);
        let header: Vec<String> = (0..d).map(|j| format!("c{j}")).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..self.len() {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads a `c0,c1,...` file. The manifold is inferred from the column
    /// count unless given (9 columns means SO(3)).
    pub fn read_csv(path: &Path, manifold: Option<Manifold>) -> Result<SampleSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let (_, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| parse_err(path, 1, "empty file"))?;
        let cols: Vec<&str> = header
            .trim_start_matches('\u{feff}')
            .split(',')
            .map(str::trim)
            .collect();
        for (j, c) in cols.iter().enumerate() {
            if *c != format!("c{j}") {
                return Err(parse_err(
                    path,
                    1,
                    &format!("expected header c0,c1,..., found '{header}'"),
                ));
            }
        }
        let d = cols.len();
        let m = match manifold {
            Some(m) => m,
            None => Manifold::from_ambient_dim(d)?,
        };
        if m.ambient_dim() != d {
            return Err(parse_err(
                path,
                1,
                &format!("{m} needs {} columns, file has {d}", m.ambient_dim()),
            ));
        }
        let mut data = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut n = 0;
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, ln, &format!("not a number: '{}'", field.trim())))?;
                if !v.is_finite() {
                    return Err(parse_err(path, ln, "non-finite coordinate"));
                }
                data.push(v);
                n += 1;
            }
            if n != d {
                return Err(parse_err(path, ln, &format!("expected {d} fields, found {n}")));
            }
            let row = &data[data.len() - d..];
            let off = manifold_offset(m, row);
            if !(off <= INGEST_TOL) {
                return Err(Error::Range {
                    path: path.to_path_buf(),
                    line: ln,
                    msg: format!("point is {off:e} away from {m}"),
                });
            }
        }
        if data.is_empty() {
            return Err(Error::Size(format!("{} holds no points", path.display())));
        }
        let pts = Array2::from_shape_vec((data.len() / d, d), data).expect("shape");
        SampleSet::new(m, pts, 0, path.display().to_string())
    }
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Offsets at or below this already satisfy the point invariants and are
/// kept bit for bit.
fn on_manifold_tol(m: Manifold) -> f64 {
    match m {
        Manifold::Sphere(_) => 1e-12,
        Manifold::So3 => 1e-10,
    }
}

/// Distance-like measure of how far ambient coordinates are from the manifold.
fn manifold_offset(m: Manifold, x: &[f64]) -> f64 {
    match m {
        Manifold::Sphere(_) => (sphere::norm(x) - 1.0).abs(),
        Manifold::So3 => {
            let r = Matrix3::from_row_slice(x);
            let e = (r.transpose() * r - Matrix3::identity()).norm();
            e.max((r.determinant() - 1.0).abs())
        }
    }
}

/// Mixture of concentrated kernels around centers on one manifold.
///
/// The per-component concentration is the vMF `kappa` on spheres and the
/// precision `1 / sigma^2` of the tangent Gaussian on SO(3); an infinite
/// concentration is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    centers: Vec<ManifoldPoint>,
    concentrations: Vec<f64>,
    weights: Vec<f64>,
}

impl MixtureSpec {
    /// Weights default to uniform.
    pub fn new(components: Vec<(ManifoldPoint, f64)>, weights: Option<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let m = components[0].0.manifold();
        if components.iter().any(|(c, _)| c.manifold() != m) {
            return Err(Error::Config("mixture centers live on different manifolds".into()));
        }
        if let Some((_, k)) = components.iter().find(|(_, k)| !(*k > 0.0)) {
            return Err(Error::Config(format!("concentration must be positive, got {k}")));
        }
        let k = components.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
        if weights.len() != k {
            return Err(Error::Config(format!("{k} components but {} weights", weights.len())));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "weights must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        let (centers, concentrations) = components.into_iter().unzip();
        Ok(Self {
            centers,
            concentrations,
            weights,
        })
    }

    /// Equal-weight vMF mixture with a shared `kappa`.
    pub fn vmf(centers: Vec<ManifoldPoint>, kappa: f64) -> Result<Self> {
        Self::new(centers.into_iter().map(|c| (c, kappa)).collect(), None)
    }

    /// Equal-weight wrapped Gaussian mixture with a shared variance.
    pub fn wrapped_gaussian(centers: Vec<ManifoldPoint>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) {
            return Err(Error::Config(format!("variance must be >= 0, got {variance}")));
        }
        Self::new(centers.into_iter().map(|c| (c, 1.0 / variance)).collect(), None)
    }

    /// `k` centers drawn uniformly on `m` with seed `seed`.
    pub fn random_centers(m: Manifold, k: usize, seed: u64) -> Result<Vec<ManifoldPoint>> {
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let s = sample_uniform(m, k, seed)?;
        Ok((0..k).map(|i| s.point(i)).collect())
    }

    pub fn manifold(&self) -> Manifold {
        self.centers[0].manifold()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[ManifoldPoint] {
        &self.centers
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tangent Gaussian variance of component `i` (SO(3) reading).
    pub fn variance(&self, i: usize) -> f64 {
        1.0 / self.concentrations[i]
    }
}

/// How mixture samples are spread over components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocation {
    /// Each draw picks its component independently by weight.
    #[default]
    Multinomial,
    /// Component counts fixed to the nearest integers to `count * weight`
    /// (largest remainder), then shuffled. Lower-variance reference sets.
    Proportional,
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        Err(Error::Size("count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Fills `out` chunk by chunk, handing `f` the chunk's own random stream.
fn fill_chunks<F>(out: &mut Array2<f64>, seed: u64, f: F)
where
    F: Fn(usize, &mut [f64], &mut rng::Rng) + Sync,
{
    let d = out.ncols();
    let data = out.as_slice_mut().expect("standard layout");
    data.par_chunks_mut(CHUNK * d).enumerate().for_each(|(c, block)| {
        let mut r = rng::stream(seed, c as u64);
        for (j, row) in block.chunks_exact_mut(d).enumerate() {
            f(c * CHUNK + j, row, &mut r);
        }
    });
}

fn uniform_sphere_into(row: &mut [f64], r: &mut rng::Rng) {
    loop {
        rng::fill_normal(r, row);
        if sphere::normalize(row).is_ok() {
            return;
        }
    }
}

fn uniform_rotation_into(row: &mut [f64], r: &mut rng::Rng) {
    let mut q = [0.0; 4];
    loop {
        rng::fill_normal(r, &mut q);
        if let Ok(rot) = Rotation::from_quaternion(q) {
            row.copy_from_slice(&rot.to_row_major());
            return;
        }
    }
}

/// Uniform law: normalized Gaussians on S^n, normalized Gaussian quaternions
/// (Haar measure) on SO(3).
pub fn sample_uniform(m: Manifold, count: usize, seed: u64) -> Result<SampleSet> {
    check_count(count)?;
    let mut out = Array2::zeros((count, m.ambient_dim()));
    match m {
        Manifold::Sphere(_) => fill_chunks(&mut out, seed, |_, row, r| uniform_sphere_into(row, r)),
        Manifold::So3 => fill_chunks(&mut out, seed, |_, row, r| uniform_rotation_into(row, r)),
    }
    Ok(SampleSet::from_raw(m, out, seed, format!("uniform-{m}")))
}

/// Uniform points on S^2, one per cell of an equal-area partition (latitude
/// bands split into longitude cells), jittered within the cell. Each point is
/// marginally uniform; region counts have far less spread than i.i.d. draws.
pub fn sample_uniform_stratified_s2(count: usize, seed: u64) -> Result<SampleSet> {
    check_count(count)?;
    let bands = ((count as f64 / 2.0).sqrt().round() as usize).max(1);
    let starts: Vec<usize> = (0..=bands).map(|i| i * count / bands).collect();
    let mut out = Array2::zeros((count, 3));
    fill_chunks(&mut out, seed, |k, row, r| {
        let i = starts.partition_point(|&s| s <= k) - 1;
        let (lo, n_i) = (starts[i], starts[i + 1] - starts[i]);
        let z = -1.0 + 2.0 * (lo as f64 + n_i as f64 * rand::Rng::random::<f64>(r)) / count as f64;
        let phi = 2.0 * PI * ((k - lo) as f64 + rand::Rng::random::<f64>(r)) / n_i as f64;
        let s = (1.0 - z * z).max(0.0).sqrt();
        row.copy_from_slice(&[s * phi.cos(), s * phi.sin(), z]);
    });
    Ok(SampleSet::from_raw(Manifold::S2, out, seed, "uniform-stratified-S2"))
}

/// Source distribution of the interpolant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    /// Uniform law on a sphere or Haar measure on SO(3).
    Uniform(Manifold),
    /// Haar rotations carried onto S^5 by scaled truncation. Supported on a
    /// 3-dimensional submanifold, so it has no density on S^5.
    EmbeddedHaar,
}

impl Prior {
    pub fn manifold(&self) -> Manifold {
        match self {
            Prior::Uniform(m) => *m,
            Prior::EmbeddedHaar => Manifold::S5,
        }
    }

    /// One draw written into `row`.
    pub fn draw_into(&self, row: &mut [f64], r: &mut rng::Rng) {
        match self {
            Prior::Uniform(Manifold::Sphere(_)) => uniform_sphere_into(row, r),
            Prior::Uniform(Manifold::So3) => uniform_rotation_into(row, r),
            Prior::EmbeddedHaar => {
                let mut m = [0.0; 9];
                uniform_rotation_into(&mut m, r);
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let cols = [m[0], m[3], m[6], m[1], m[4], m[7]];
                for (o, c) in row.iter_mut().zip(cols) {
                    *o = c * s;
                }
            }
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleSet> {
        check_count(count)?;
        let m = self.manifold();
        let mut out = Array2::zeros((count, m.ambient_dim()));
        fill_chunks(&mut out, seed, |_, row, r| self.draw_into(row, r));
        Ok(SampleSet::from_raw(m, out, seed, self.to_string()))
    }

    /// Log density with respect to the Riemannian volume, when one exists.
    pub fn log_density(&self) -> Option<f64> {
        match self {
            Prior::Uniform(m) => Some(log_density_uniform(*m)),
            Prior::EmbeddedHaar => None,
        }
    }
}

impl std::fmt::Display for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prior::Uniform(m) => write!(f, "uniform-{m}"),
            Prior::EmbeddedHaar => f.write_str("embedded-haar"),
        }
    }
}

/// Component of each of `count` draws under proportional allocation.
fn proportional_labels(weights: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * count as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut left = count - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    labels.shuffle(&mut rng::stream(rng::derive(seed, "allocation"), 0));
    labels
}

fn pick_component(cumulative: &[f64], r: &mut rng::Rng) -> usize {
    let u: f64 = rand::Rng::random(r);
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

fn sample_mixture<F>(spec: &MixtureSpec, count: usize, seed: u64, allocation: Allocation, kernel: F) -> Array2<f64>
where
    F: Fn(usize, &mut [f64], &mut rng::Rng) + Sync,
{
    let mut cumulative: Vec<f64> = spec
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    *cumulative.last_mut().unwrap() = 1.0;
    let labels = match allocation {
        Allocation::Multinomial => None,
        Allocation::Proportional => Some(proportional_labels(&spec.weights, count, seed)),
    };
    let mut out = Array2::zeros((count, spec.manifold().ambient_dim()));
    fill_chunks(&mut out, seed, |i, row, r| {
        let c = match &labels {
            Some(l) => l[i],
            None => pick_component(&cumulative, r),
        };
        kernel(c, row, r);
    });
    out
}

/// vMF(mu, kappa) draw on S^2 by inverse CDF of the cosine to `mu`.
fn vmf_s2_into(mu: &[f64], kappa: f64, row: &mut [f64], r: &mut rng::Rng) {
    let u = rng::open_unit(r);
    let w = (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0);
    let phi = 2.0 * PI * rand::Rng::random::<f64>(r);
    let mut basis = [0.0; 6];
    sphere::tangent_basis_into(mu, &mut basis);
    let s = (1.0 - w * w).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    for k in 0..3 {
        row[k] = w * mu[k] + s * (cp * basis[k] + sp * basis[3 + k]);
    }
    sphere::normalize(row).expect("unit combination");
}

/// Mixture of von Mises-Fisher laws on S^2.
pub fn sample_vmf_mixture(spec: &MixtureSpec, count: usize, seed: u64) -> Result<SampleSet> {
    sample_vmf_mixture_with(spec, count, seed, Allocation::Multinomial)
}

pub fn sample_vmf_mixture_with(
    spec: &MixtureSpec,
    count: usize,
    seed: u64,
    allocation: Allocation,
) -> Result<SampleSet> {
    check_count(count)?;
    if spec.manifold() != Manifold::S2 {
        return Err(Error::Config(format!(
            "vMF sampling is implemented on s2, spec lives on {}",
            spec.manifold()
        )));
    }
    let mus: Vec<Vec<f64>> = spec.centers.iter().map(ManifoldPoint::ambient).collect();
    let out = sample_mixture(spec, count, seed, allocation, |c, row, r| {
        vmf_s2_into(&mus[c], spec.concentrations[c], row, r)
    });
    Ok(SampleSet::from_raw(
        Manifold::S2,
        out,
        seed,
        format!("vmf-mixture-k{}", spec.len()),
    ))
}

/// Mixture of wrapped Gaussians `p_i exp(omega)`, `omega ~ N(0, sigma_i^2 I)`
/// conditioned on `|omega| < pi`.
pub fn sample_wrapped_gaussian_so3(spec: &MixtureSpec, count: usize, seed: u64) -> Result<SampleSet> {
    sample_wrapped_gaussian_so3_counted(spec, count, seed, Allocation::Multinomial).map(|(s, _)| s)
}

/// Also returns the number of rejected tangent draws.
pub fn sample_wrapped_gaussian_so3_counted(
    spec: &MixtureSpec,
    count: usize,
    seed: u64,
    allocation: Allocation,
) -> Result<(SampleSet, u64)> {
    check_count(count)?;
    if spec.manifold() != Manifold::So3 {
        return Err(Error::Config(format!(
            "wrapped Gaussian sampling needs an so3 spec, got {}",
            spec.manifold()
        )));
    }
    let centers: Vec<Matrix3<f64>> = spec
        .centers
        .iter()
        .map(|c| match c {
            ManifoldPoint::Rotation(r) => *r.matrix(),
            ManifoldPoint::Sphere(_) => unreachable!("checked manifold"),
        })
        .collect();
    let sigmas: Vec<f64> = (0..spec.len()).map(|i| spec.variance(i).sqrt()).collect();
    let rejected = std::sync::atomic::AtomicU64::new(0);
    let out = sample_mixture(spec, count, seed, allocation, |c, row, r| {
        let m = if sigmas[c] == 0.0 {
            centers[c]
        } else {
            let omega = loop {
                let w = Vector3::new(rng::normal(r), rng::normal(r), rng::normal(r)) * sigmas[c];
                if w.norm() < PI {
                    break w;
                }
                rejected.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            };
            centers[c] * so3::exp_matrix(&omega)
        };
        for i in 0..3 {
            for j in 0..3 {
                row[3 * i + j] = m[(i, j)];
            }
        }
    });
    let set = SampleSet::from_raw(Manifold::So3, out, seed, format!("wrapped-gaussian-k{}", spec.len()));
    Ok((set, rejected.into_inner()))
}

/// Reads a `lat,lon` CSV in degrees into points on S^2, keeping row order.
pub fn ingest_latlon_csv(path: &Path) -> Result<SampleSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (hl, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(path, 1, "empty file, expected header 'lat,lon'"))?;
    let cols: Vec<String> = header
        .trim_start_matches('\u{feff}')
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    if cols != ["lat", "lon"] {
        return Err(parse_err(
            path,
            hl,
            &format!("expected header 'lat,lon', found '{header}'"),
        ));
    }
    let mut data = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                ln,
                &format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, ln, &format!("not a number: '{s}'")))
        };
        let (lat, lon) = (num(fields[0])?, num(fields[1])?);
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line: ln,
                msg: format!("latitude {lat} outside [-90, 90]"),
            });
        }
        if !(lon > -180.0 && lon <= 180.0) {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line: ln,
                msg: format!("longitude {lon} outside (-180, 180]"),
            });
        }
        data.extend_from_slice(&latlon_to_xyz(lat, lon));
    }
    if data.is_empty() {
        return Err(Error::Size(format!("{} holds no records", path.display())));
    }
    let pts = Array2::from_shape_vec((data.len() / 3, 3), data).expect("shape");
    Ok(SampleSet::from_raw(Manifold::S2, pts, 0, path.display().to_string()))
}

/// Degrees to the unit vector `(cos phi cos lambda, cos phi sin lambda, sin phi)`.
pub fn latlon_to_xyz(lat: f64, lon: f64) -> [f64; 3] {
    let (sp, cp) = lat.to_radians().sin_cos();
    let (sl, cl) = lon.to_radians().sin_cos();
    let mut x = [cp * cl, cp * sl, sp];
    // sin_cos of 90 degrees leaves a 6e-17 residue; snap exact axes.
    for v in &mut x {
        if v.abs() < 1e-16 {
            *v = 0.0;
        }
    }
    let r = sphere::norm(&x);
    x.map(|v| v / r)
}

/// Log of the uniform density: `-log area(S^n)`, or `-log(8 pi^2)` on SO(3).
pub fn log_density_uniform(m: Manifold) -> f64 {
    match m {
        Manifold::Sphere(n) => -sphere::area(n).ln(),
        Manifold::So3 => -(8.0 * PI * PI).ln(),
    }
}

/// Uniform density, constant on the manifold.
pub fn density_uniform(m: Manifold, _x: &[f64]) -> f64 {
    log_density_uniform(m).exp()
}

/// `log(kappa / (4 pi sinh kappa))`, stable for large and small kappa.
pub fn vmf_s2_log_normalizer(kappa: f64) -> f64 {
    // sinh k = e^k (1 - e^{-2k}) / 2
    if kappa < 1e-8 {
        return -(4.0 * PI).ln();
    }
    kappa.ln() - (2.0 * PI).ln() - kappa - (-(-2.0 * kappa).exp()).ln_1p()
}

/// Log density of a vMF mixture on S^2 by log-sum-exp over components.
pub fn log_density_vmf_mixture(spec: &MixtureSpec, x: &[f64]) -> f64 {
    let terms: Vec<f64> = spec
        .centers
        .iter()
        .zip(&spec.concentrations)
        .zip(&spec.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|((c, &k), &w)| {
            let mu = match c {
                ManifoldPoint::Sphere(p) => p.coords(),
                ManifoldPoint::Rotation(_) => unreachable!("vMF spec on a sphere"),
            };
            w.ln() + vmf_s2_log_normalizer(k) + k * sphere::dot(mu, x)
        })
        .collect();
    log_sum_exp(&terms)
}

pub fn density_vmf_mixture(spec: &MixtureSpec, x: &[f64]) -> f64 {
    log_density_vmf_mixture(spec, x).exp()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Mean resultant length `coth k - 1/k` of vMF on S^2.
pub fn vmf_s2_mean_resultant(kappa: f64) -> f64 {
    if kappa < 1e-4 {
        return kappa / 3.0;
    }
    1.0 / kappa.tanh() - 1.0 / kappa
}

/// `KL(vMF(kappa) || uniform)` on S^2.
pub fn vmf_s2_kl_to_uniform(kappa: f64) -> f64 {
    vmf_s2_log_normalizer(kappa) + kappa * vmf_s2_mean_resultant(kappa) + (4.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::SpherePoint;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn s2(x: [f64; 3]) -> ManifoldPoint {
        ManifoldPoint::Sphere(SpherePoint::new(x.to_vec()).unwrap())
    }

    #[test]
    fn uniform_s2_mean_is_small() {
        let s = sample_uniform(Manifold::S2, 100_000, 1).unwrap();
        let mean = s.points().mean_axis(Axis(0)).unwrap();
        assert!(sphere::norm(mean.as_slice().unwrap()) <= 0.01);
        for i in 0..s.len() {
            assert!((sphere::norm(s.row(i)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn stratified_s2_fills_cells_evenly() {
        for n in [1, 7, 1000, 2048] {
            let s = sample_uniform_stratified_s2(n, 3).unwrap();
            assert_eq!(s.len(), n);
            for i in 0..n {
                assert!((sphere::norm(s.row(i)) - 1.0).abs() <= 1e-12);
            }
        }
        // every octant holds an eighth of the points up to the cells it cuts
        let s = sample_uniform_stratified_s2(2048, 4).unwrap();
        let mut octant = [0usize; 8];
        for i in 0..s.len() {
            let x = s.row(i);
            let k = (x[0] > 0.0) as usize | ((x[1] > 0.0) as usize) << 1 | ((x[2] > 0.0) as usize) << 2;
            octant[k] += 1;
        }
        assert!(octant.iter().all(|&c| c.abs_diff(256) <= 8), "{octant:?}");
        let z: f64 = (0..s.len()).map(|i| s.row(i)[2]).sum::<f64>() / 2048.0;
        assert!(z.abs() <= 1e-3, "{z}");
    }

    #[test]
    fn uniform_so3_mean_trace_vanishes() {
        let s = sample_uniform(Manifold::So3, 100_000, 2).unwrap();
        let mean_tr: f64 = (0..s.len())
            .map(|i| s.row(i)[0] + s.row(i)[4] + s.row(i)[8])
            .sum::<f64>()
            / s.len() as f64;
        assert!(mean_tr.abs() <= 0.02, "{mean_tr}");
        let r = Rotation::from_row_major(s.row(17)).unwrap();
        let (o, d) = r.invariant_errors();
        assert!(o <= 1e-10 && (d - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn single_draw_and_zero_count() {
        let s = sample_uniform(Manifold::S2, 1, 9).unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(s.point(0), ManifoldPoint::Sphere(_)));
        assert_eq!(sample_uniform(Manifold::S2, 0, 9).unwrap_err().class(), "SizeError");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_uniform(Manifold::S2, 5000, 42).unwrap();
        let b = sample_uniform(Manifold::S2, 5000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_uniform(Manifold::S2, 5000, 43).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn vmf_large_kappa_concentrates() {
        let mu = s2([0.0, 0.6, 0.8]);
        let spec = MixtureSpec::vmf(vec![mu.clone()], 1e6).unwrap();
        let s = sample_vmf_mixture(&spec, 2000, 3).unwrap();
        let m = mu.ambient();
        for i in 0..s.len() {
            assert!(sphere::distance(s.row(i), &m) <= 0.01);
        }
    }

    #[test]
    fn vmf_mean_direction_and_length() {
        let mu = s2([1.0, 2.0, -2.0].map(|v| v / 3.0));
        let spec = MixtureSpec::vmf(vec![mu.clone()], 256.0).unwrap();
        let s = sample_vmf_mixture(&spec, 10_000, 5).unwrap();
        let mean = s.points().mean_axis(Axis(0)).unwrap().to_vec();
        let len = sphere::norm(&mean);
        assert!(sphere::distance(&mean.iter().map(|v| v / len).collect::<Vec<_>>(), &mu.ambient()) <= 0.02);
        assert_abs_diff_eq!(len, vmf_s2_mean_resultant(256.0), epsilon = 2e-3);
    }

    #[test]
    fn antipodal_components_split_evenly() {
        let spec = MixtureSpec::vmf(vec![s2([0.0, 0.0, 1.0]), s2([0.0, 0.0, -1.0])], 50.0).unwrap();
        let n = 20_000;
        let s = sample_vmf_mixture(&spec, n, 6).unwrap();
        let north = (0..n).filter(|&i| s.row(i)[2] > 0.0).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((north - n as f64 / 2.0).abs() <= 3.0 * sd);
        let p = sample_vmf_mixture_with(&spec, n, 6, Allocation::Proportional).unwrap();
        assert_eq!((0..n).filter(|&i| p.row(i)[2] > 0.0).count(), n / 2);
    }

    #[test]
    fn proportional_labels_match_weights() {
        let l = proportional_labels(&[0.5, 0.3, 0.2], 11, 1);
        let count = |k| l.iter().filter(|&&c| c == k).count();
        assert_eq!(l.len(), 11);
        assert_eq!((count(0), count(1), count(2)), (6, 3, 2));
    }

    #[test]
    fn wrapped_gaussian_zero_variance_hits_centers() {
        let c = MixtureSpec::random_centers(Manifold::So3, 3, 1).unwrap();
        let spec = MixtureSpec::wrapped_gaussian(c.clone(), 0.0).unwrap();
        let s = sample_wrapped_gaussian_so3(&spec, 300, 2).unwrap();
        let centers: Vec<Vec<f64>> = c.iter().map(ManifoldPoint::ambient).collect();
        for i in 0..s.len() {
            assert!(centers.iter().any(|m| m.as_slice() == s.row(i)));
        }
    }

    #[test]
    fn wrapped_gaussian_distance_matches_chi_law() {
        let c = MixtureSpec::random_centers(Manifold::So3, 1, 11).unwrap();
        let spec = MixtureSpec::wrapped_gaussian(c.clone(), 0.01).unwrap();
        let (s, rejected) = sample_wrapped_gaussian_so3_counted(&spec, 100_000, 12, Allocation::Multinomial).unwrap();
        assert_eq!(rejected, 0);
        let m = c[0].ambient();
        let mean_d: f64 = (0..s.len()).map(|i| so3::distance_row_major(&m, s.row(i))).sum::<f64>() / s.len() as f64;
        // Oracle: brute-force Monte Carlo of |omega| with omega ~ N(0, 0.01 I_3).
        let mut r = rng::stream(99, 0);
        let oracle: f64 = (0..200_000)
            .map(|_| {
                let w = [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)];
                0.1 * sphere::norm(&w)
            })
            .sum::<f64>()
            / 200_000.0;
        assert!((mean_d / oracle - 1.0).abs() <= 0.02, "{mean_d} vs {oracle}");
    }

    #[test]
    fn latlon_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        write!(f, "lat,lon\r\n90,0\r\n0,0\r\n0,90\r\n\r\n").unwrap();
        let s = ingest_latlon_csv(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_abs_diff_eq!(s.row(0), &[0.0, 0.0, 1.0][..], epsilon = 1e-15);
        assert_abs_diff_eq!(s.row(1), &[1.0, 0.0, 0.0][..], epsilon = 1e-15);
        assert_abs_diff_eq!(s.row(2), &[0.0, 1.0, 0.0][..], epsilon = 1e-15);
    }

    #[test]
    fn latlon_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "lat,lon\n10,20\n12,abc\n").unwrap();
        match ingest_latlon_csv(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        std::fs::write(&p, "lat,lon\n10,20\n95,0\n").unwrap();
        assert_eq!(ingest_latlon_csv(&p).unwrap_err().class(), "RangeError");
        std::fs::write(&p, "lat,lon\n0,-180\n").unwrap();
        assert_eq!(ingest_latlon_csv(&p).unwrap_err().class(), "RangeError");
        std::fs::write(&p, "latitude,longitude\n0,0\n").unwrap();
        assert_eq!(ingest_latlon_csv(&p).unwrap_err().class(), "ParseError");
    }

    #[test]
    fn sample_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for m in [Manifold::S2, Manifold::So3, Manifold::S5] {
            let s = sample_uniform(m, 50, 4).unwrap();
            let p = dir.path().join(format!("{m}.csv"));
            s.write_csv(&p).unwrap();
            let back = SampleSet::read_csv(&p, Some(m)).unwrap();
            assert_eq!(back.points(), s.points());
        }
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "c0,c1,c2\n1,0,0\n3,0,0\n").unwrap();
        assert_eq!(SampleSet::read_csv(&p, None).unwrap_err().class(), "RangeError");
    }

    #[test]
    fn s5_route_round_trip() {
        let s = sample_uniform(Manifold::So3, 200, 8).unwrap();
        let e = s.to_s5().unwrap();
        for i in 0..e.len() {
            assert_abs_diff_eq!(sphere::norm(e.row(i)), 1.0, epsilon = 1e-14);
        }
        let back = e.s5_to_so3().unwrap();
        for i in 0..s.len() {
            assert_abs_diff_eq!(back.row(i), s.row(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn densities() {
        assert_abs_diff_eq!(
            density_uniform(Manifold::S2, &[1.0, 0.0, 0.0]),
            0.0795775,
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            density_uniform(Manifold::So3, &[0.0; 9]),
            1.0 / (8.0 * PI * PI),
            epsilon = 1e-15
        );
        let mu = s2([0.0, 0.0, 1.0]);
        let spec = MixtureSpec::vmf(vec![mu], 256.0).unwrap();
        let ld = log_density_vmf_mixture(&spec, &[0.0, 0.0, 1.0]);
        // log(256 / (4 pi sinh 256)) + 256 = log(256 / (2 pi)) up to e^{-512}.
        assert_abs_diff_eq!(ld, (256.0 / (2.0 * PI)).ln(), epsilon = 1e-12);
        assert!(density_vmf_mixture(&spec, &[0.0, 0.0, 1.0]).is_finite());
    }

    #[test]
    fn vmf_density_normalizes() {
        let centers = MixtureSpec::random_centers(Manifold::S2, 3, 5).unwrap();
        let spec = MixtureSpec::vmf(centers, 4.0).unwrap();
        let u = sample_uniform(Manifold::S2, 1_000_000, 6).unwrap();
        let area = 4.0 * PI;
        let vals: Vec<f64> = (0..u.len())
            .map(|i| area * density_vmf_mixture(&spec, u.row(i)))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() <= 3.0 * (var / n).sqrt(), "{mean}");
    }

    #[test]
    fn closed_form_kl() {
        assert_abs_diff_eq!(vmf_s2_kl_to_uniform(256.0), 5.238, epsilon = 1e-3);
    }

    #[test]
    fn embedded_haar_prior_matches_to_s5() {
        let p = Prior::EmbeddedHaar.sample(100, 3).unwrap();
        let q = sample_uniform(Manifold::So3, 100, 3).unwrap().to_s5().unwrap();
        assert_abs_diff_eq!(p.points(), q.points(), epsilon = 1e-15);
        assert!(Prior::EmbeddedHaar.log_density().is_none());
        assert_abs_diff_eq!(
            Prior::Uniform(Manifold::S2).log_density().unwrap(),
            -(4.0 * PI).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn mixture_spec_validation() {
        let c = s2([1.0, 0.0, 0.0]);
        assert!(MixtureSpec::vmf(vec![c.clone()], 0.0).is_err());
        assert!(MixtureSpec::new(vec![(c.clone(), 1.0)], Some(vec![0.5])).is_err());
        assert!(MixtureSpec::new(vec![], None).is_err());
    }
}
