//! Projected field evaluation, manifold divergence and the two training losses.

use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::net::FieldNet;
use crate::error::{Error, Result};
use crate::interpolant::InterpolantBatch;
use crate::manifold::{sphere, ManifoldPoint, TangentVector};

/// Rows per work unit in batched evaluation and gradient accumulation. Fixed
/// so reductions happen in the same order whatever the thread count.
pub const EVAL_CHUNK: usize = 256;
const GRAD_CHUNK: usize = 64;

fn project_rows(x: ArrayView2<f64>, y: &mut Array2<f64>) {
    for (xr, mut yr) in x.outer_iter().zip(y.outer_iter_mut()) {
        sphere::project(xr.as_slice().unwrap(), yr.as_slice_mut().unwrap());
    }
}

/// Orthonormal tangent bases at every row of `x`: block `i` holds the `i`-th
/// basis vector of each row.
pub(crate) fn tangent_bases(x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let (b, d) = x.dim();
    let n = d - 1;
    let mut blocks = vec![Array2::zeros((b, d)); n];
    let mut buf = vec![0.0; n * d];
    for r in 0..b {
        sphere::tangent_basis_into(x.row(r).as_slice().unwrap(), &mut buf);
        for (i, blk) in blocks.iter_mut().enumerate() {
            blk.row_mut(r)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&buf[i * d..(i + 1) * d]);
        }
    }
    blocks
}

fn standard(x: ArrayView2<f64>) -> Array2<f64> {
    x.as_standard_layout().into_owned()
}

impl FieldNet {
    /// Tangent field `P_x y(t, x)` at every row of `x`, at a shared time.
    pub fn field(&self, t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        let x = standard(x);
        let chunks: Vec<Array2<f64>> = row_chunks(x.nrows())
            .into_par_iter()
            .map(|(lo, hi)| {
                let xc = x.slice(s![lo..hi, ..]);
                let mut y = self.forward(&[t], xc);
                project_rows(xc, &mut y);
                y
            })
            .collect();
        concat_rows(chunks, x.ncols())
    }

    /// Field values and manifold divergences at a shared time.
    pub fn field_and_divergence(&self, t: f64, x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let x = standard(x);
        let parts: Vec<(Array2<f64>, Array1<f64>)> = row_chunks(x.nrows())
            .into_par_iter()
            .map(|(lo, hi)| self.field_div_chunk(&[t], x.slice(s![lo..hi, ..])))
            .collect();
        let d = x.ncols();
        let (fs, ds): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let div = Array1::from(ds.into_iter().flat_map(|a| a.to_vec()).collect::<Vec<_>>());
        (concat_rows(fs, d), div)
    }

    /// Manifold divergence of `P_x y(t, .)` at every row.
    pub fn divergence(&self, t: f64, x: ArrayView2<f64>) -> Array1<f64> {
        self.field_and_divergence(t, x).1
    }

    /// `div P y = sum_i <e_i, J e_i> - n <y, x>` over a tangent basis `e_i`.
    fn field_div_chunk(&self, t: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let (b, d) = x.dim();
        let n = d - 1;
        let bases = tangent_bases(x);
        let views: Vec<_> = bases.iter().map(|e| e.view()).collect();
        let tape = self.forward_tape(self.stacked_inputs(t, x, &views), n);
        let y = tape.output.slice(s![..b, ..]);
        let mut f = y.to_owned();
        project_rows(x, &mut f);
        let mut div = Array1::zeros(b);
        for r in 0..b {
            let yx: f64 = y.row(r).dot(&x.row(r));
            let mut acc = -(n as f64) * yx;
            for (i, e) in bases.iter().enumerate() {
                acc += tape.output.row((i + 1) * b + r).dot(&e.row(r));
            }
            div[r] = acc;
        }
        (f, div)
    }

    /// Directional derivative of the ambient extension `x -> P_x y(t, x)`
    /// along `dir`: `P J dir - <y, dir> x - <y, x> dir`.
    pub fn jvp(&self, t: f64, x: &[f64], dir: &[f64]) -> Vec<f64> {
        let d = x.len();
        let xv = ArrayView2::from_shape((1, d), x).unwrap();
        let dv = ArrayView2::from_shape((1, d), dir).unwrap();
        let tape = self.forward_tape(self.stacked_inputs(&[t], xv, &[dv]), 1);
        let y = tape.output.row(0).to_vec();
        let mut jd = tape.output.row(1).to_vec();
        sphere::project(x, &mut jd);
        let yd = sphere::dot(&y, dir);
        let yx = sphere::dot(&y, x);
        (0..d).map(|k| jd[k] - yd * x[k] - yx * dir[k]).collect()
    }
}

fn row_chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(EVAL_CHUNK)
        .map(|lo| (lo, (lo + EVAL_CHUNK).min(n)))
        .collect()
}

fn concat_rows(parts: Vec<Array2<f64>>, d: usize) -> Array2<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Array2::zeros((rows, d));
    let mut r = 0;
    for p in parts {
        out.slice_mut(s![r..r + p.nrows(), ..]).assign(&p);
        r += p.nrows();
    }
    out
}

/// Field value at a single point, tangent at `x`.
pub fn field_eval(net: &FieldNet, t: f64, x: &ManifoldPoint) -> Result<TangentVector> {
    let c = match x {
        ManifoldPoint::Sphere(p) if p.ambient_dim() == net.ambient_dim() => p.coords(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "net on {} cannot be evaluated at a point of {}",
                net.manifold(),
                x.manifold()
            )))
        }
    };
    let f = net.field(t, ArrayView2::from_shape((1, c.len()), c).unwrap());
    TangentVector::new(x.clone(), f.row(0).to_vec())
}

fn check_batch(net: &FieldNet, batch: &InterpolantBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Size("empty interpolant batch".into()));
    }
    if batch.manifold != net.manifold() {
        return Err(Error::Config(format!(
            "net on {} given a batch on {}",
            net.manifold(),
            batch.manifold
        )));
    }
    Ok(())
}

/// Runs `chunk` over fixed row ranges in parallel and reduces the partial
/// `(loss sum, gradient)` pairs in range order.
fn chunked<F>(net: &FieldNet, n: usize, chunk: F) -> (f64, Vec<f64>)
where
    F: Fn(usize, usize) -> (f64, Vec<f64>) + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&lo| chunk(lo, (lo + GRAD_CHUNK).min(n)))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.num_params()];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (loss, grad)
}

/// `mean(1/2 |v|^2 - <d/dt I, v>)` with `v = P_xt y(t, xt)`, and its
/// gradient in the net's parameters.
pub fn velocity_loss(net: &FieldNet, batch: &InterpolantBatch) -> Result<(f64, Vec<f64>)> {
    check_batch(net, batch)?;
    let n = batch.len();
    let inv = 1.0 / n as f64;
    let (loss, grad) = chunked(net, n, |lo, hi| {
        let x = batch.xt.slice(s![lo..hi, ..]);
        let u = batch.dxt.slice(s![lo..hi, ..]);
        let t = batch.t.slice(s![lo..hi]).to_vec();
        let tape = net.forward_tape(net.features(&t, x), 0);
        let mut f = tape.output.clone();
        project_rows(x, &mut f);
        let mut pu = u.to_owned();
        project_rows(x, &mut pu);
        let mut loss = 0.0;
        for r in 0..f.nrows() {
            let fr = f.row(r);
            loss += 0.5 * fr.dot(&fr) - fr.dot(&u.row(r));
        }
        let g = (&f - &pu) * inv;
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&tape, g, &mut grad);
        (loss, grad)
    });
    Ok((loss * inv, grad))
}

/// Implicit score matching: `mean(1/2 |s|^2 + div s)` with `s = P_xt y`,
/// divergence taken exactly along a tangent basis, and its gradient.
pub fn score_loss_ism(net: &FieldNet, batch: &InterpolantBatch) -> Result<(f64, Vec<f64>)> {
    check_batch(net, batch)?;
    if !net.activation().is_smooth() {
        return Err(Error::Config(format!(
            "score net needs a smooth activation, got {}",
            net.activation()
        )));
    }
    let n = batch.len();
    let inv = 1.0 / n as f64;
    let dim = net.manifold().dim();
    let (loss, grad) = chunked(net, n, |lo, hi| {
        let x = batch.xt.slice(s![lo..hi, ..]);
        let t = batch.t.slice(s![lo..hi]).to_vec();
        let b = hi - lo;
        let bases = tangent_bases(x);
        let views: Vec<_> = bases.iter().map(|e| e.view()).collect();
        let tape = net.forward_tape(net.stacked_inputs(&t, x, &views), dim);
        let y = tape.output.slice(s![..b, ..]);
        let mut f = y.to_owned();
        project_rows(x, &mut f);
        let mut loss = 0.0;
        let mut g = Array2::zeros(tape.output.dim());
        for r in 0..b {
            let fr = f.row(r);
            let mut div = -(dim as f64) * y.row(r).dot(&x.row(r));
            for (i, e) in bases.iter().enumerate() {
                div += tape.output.row((i + 1) * b + r).dot(&e.row(r));
                g.row_mut((i + 1) * b + r).assign(&(&e.row(r) * inv));
            }
            loss += 0.5 * fr.dot(&fr) + div;
            let gr = (&fr - &(&x.row(r) * dim as f64)) * inv;
            g.row_mut(r).assign(&gr);
        }
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&tape, g, &mut grad);
        (loss, grad)
    });
    Ok((loss * inv, grad))
}
