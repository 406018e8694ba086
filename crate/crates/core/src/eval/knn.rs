//! Nearest-neighbour KL divergence estimate with geodesic distances.
//!
//! Neighbours are ranked by chordal distance (the embedding norm on S^n, the
//! Frobenius norm on SO(3)), which is monotone in the geodesic distance on
//! both manifolds; only the selected k-th distances are converted.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;

use crate::distributions::SampleSet;
use crate::error::{Error, Result};
use crate::manifold::Manifold;

/// Raw estimate and the value clipped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub raw: f64,
    pub clipped: f64,
}

fn chord2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Geodesic distance from a squared chord.
fn chord_to_geodesic(m: Manifold, c2: f64) -> f64 {
    let c = c2.sqrt();
    match m {
        Manifold::Sphere(_) => 2.0 * (0.5 * c).min(1.0).asin(),
        // |R - Q|_F = 2 sqrt(2) sin(theta / 2)
        Manifold::So3 => 2.0 * (c / (2.0 * SQRT_2)).min(1.0).asin(),
    }
}

/// Smallest and k-th smallest squared chord from `x` to the rows of `set`,
/// skipping row `skip`.
fn kth_chord2(x: &[f64], set: &SampleSet, k: usize, skip: Option<usize>) -> (f64, f64) {
    let mut best = vec![f64::INFINITY; k];
    for j in 0..set.len() {
        if Some(j) == skip {
            continue;
        }
        let d = chord2(x, set.row(j));
        if d < best[k - 1] {
            let mut pos = k - 1;
            while pos > 0 && best[pos - 1] > d {
                best[pos] = best[pos - 1];
                pos -= 1;
            }
            best[pos] = d;
        }
    }
    (best[0], best[k - 1])
}

/// Estimate of `KL(p || q)` from samples:
/// `d/n sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))`, where `rho_k` is
/// the k-th neighbour distance within `p`, `nu_k` the k-th neighbour distance
/// into `q`, and `d` the manifold dimension.
pub fn kl_knn(p: &SampleSet, q: &SampleSet, k: usize) -> Result<KlEstimate> {
    if k == 0 {
        return Err(Error::Size("kl_knn needs k >= 1".into()));
    }
    if p.len() < k + 1 || q.len() < k + 1 {
        return Err(Error::Size(format!(
            "kl_knn with k = {k} needs at least {} points per set, got {} and {}",
            k + 1,
            p.len(),
            q.len()
        )));
    }
    let m = p.manifold();
    if q.manifold() != m {
        return Err(Error::InvalidArgument(format!(
            "kl_knn between {m} and {}",
            q.manifold()
        )));
    }
    let (n, nq) = (p.len(), q.len());
    let terms: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = p.row(i);
            let (p_min, p_k) = kth_chord2(x, p, k, Some(i));
            let (q_min, q_k) = kth_chord2(x, q, k, None);
            if p_min <= 0.0 || q_min <= 0.0 {
                return Err(Error::Degeneracy(format!(
                    "zero neighbour distance at sample {i}; sets contain duplicates"
                )));
            }
            Ok((chord_to_geodesic(m, q_k) / chord_to_geodesic(m, p_k)).ln())
        })
        .collect();
    let mut sum = 0.0;
    for t in terms {
        sum += t?;
    }
    let d = m.dim() as f64;
    let raw = d / n as f64 * sum + (nq as f64 / (n - 1) as f64).ln();
    Ok(KlEstimate {
        raw,
        clipped: raw.max(0.0),
    })
}
