//! Exact optimal transport between equal-size empirical measures.

use ndarray::Array2;
use rayon::prelude::*;

use crate::distributions::SampleSet;
use crate::error::{Error, Result};

/// Subsample cap used when none is given.
pub const DEFAULT_MAX_N: usize = 2048;

/// Minimum-cost perfect matching on a square cost matrix by shortest
/// augmenting paths with dual potentials (Hungarian method, O(n^3)).
/// Returns `assign[row] = col` and the total cost.
pub fn assignment(cost: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::Size(format!("assignment needs a square matrix, got {n}x{m}")));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("assignment cost must be finite".into()));
    }
    let c = cost.as_standard_layout();
    let c = c.as_slice().unwrap();
    // 1-based internally; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &c[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
    Ok((assign, total))
}

/// Squared geodesic distances, rows of `a` against rows of `b`.
pub fn squared_distance_matrix(a: &SampleSet, b: &SampleSet) -> Array2<f64> {
    let m = a.manifold();
    let (na, nb) = (a.len(), b.len());
    let rows: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|i| {
            let x = a.row(i);
            (0..nb).map(|j| m.distance(x, b.row(j)).powi(2)).collect()
        })
        .collect();
    Array2::from_shape_vec((na, nb), rows.concat()).unwrap()
}

/// Empirical Wasserstein-2 distance with geodesic ground cost. Both sets are
/// subsampled to `min(max_n, |a|, |b|)` points with the same seed.
pub fn w2_empirical(a: &SampleSet, b: &SampleSet, max_n: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Size(format!(
            "w2 needs nonempty sets, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.manifold() != b.manifold() {
        return Err(Error::InvalidArgument(format!(
            "w2 between {} and {}",
            a.manifold(),
            b.manifold()
        )));
    }
    if max_n == 0 {
        return Err(Error::Size("w2 max_n must be positive".into()));
    }
    let n = max_n.min(a.len()).min(b.len());
    let (a, b) = (a.subsample(n, seed), b.subsample(n, seed));
    let cost = squared_distance_matrix(&a, &b);
    let (_, total) = assignment(&cost)?;
    Ok((total / n as f64).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_uniform;
    use crate::manifold::so3::Rotation;
    use crate::manifold::Manifold;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn set(rows: &[Vec<f64>]) -> SampleSet {
        let d = rows[0].len();
        let a = Array2::from_shape_vec((rows.len(), d), rows.concat()).unwrap();
        SampleSet::new(Manifold::S2, a, 0, "test").unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_eight_points() {
        let perms = permutations(8);
        assert_eq!(perms.len(), 40320);
        for seed in 0..5 {
            let a = sample_uniform(Manifold::S2, 8, 2 * seed).unwrap();
            let b = sample_uniform(Manifold::S2, 8, 2 * seed + 1).unwrap();
            let c = squared_distance_matrix(&a, &b);
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let (assign, total) = assignment(&c).unwrap();
            let mut seen = assign.clone();
            seen.sort();
            assert_eq!(seen, (0..8).collect::<Vec<_>>());
            assert_abs_diff_eq!(total, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_integer_costs_against_brute_force() {
        let perms = permutations(6);
        let mut r = crate::rng::stream(3, 0);
        for _ in 0..50 {
            let c = Array2::from_shape_fn((6, 6), |_| r.random_range(0..20) as f64);
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(assignment(&c).unwrap().1, best);
        }
    }

    #[test]
    fn identical_sets_and_point_masses() {
        let a = sample_uniform(Manifold::S2, 300, 1).unwrap();
        assert!(w2_empirical(&a, &a, DEFAULT_MAX_N, 0).unwrap() <= 1e-12);
        let p = set(&[vec![1.0, 0.0, 0.0]]);
        let q = set(&[vec![0.6, 0.8, 0.0]]);
        assert_abs_diff_eq!(w2_empirical(&p, &q, 10, 0).unwrap(), 0.8f64.atan2(0.6), epsilon = 1e-15);
        let r = sample_uniform(Manifold::So3, 50, 2).unwrap();
        assert!(w2_empirical(&r, &r, 10, 3).unwrap() <= 1e-12);
    }

    #[test]
    fn symmetric_triangle_and_isometry_invariant() {
        let a = sample_uniform(Manifold::S2, 200, 1).unwrap();
        let b = sample_uniform(Manifold::S2, 200, 2).unwrap();
        let c = sample_uniform(Manifold::S2, 200, 3).unwrap();
        let ab = w2_empirical(&a, &b, 2048, 0).unwrap();
        let ba = w2_empirical(&b, &a, 2048, 0).unwrap();
        let bc = w2_empirical(&b, &c, 2048, 0).unwrap();
        let ac = w2_empirical(&a, &c, 2048, 0).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
        assert!(ac <= ab + bc + 1e-9);
        let rot = Rotation::from_quaternion([0.3, -0.5, 0.7, 0.2]).unwrap();
        let turn = |s: &SampleSet| {
            let pts: Vec<Vec<f64>> = (0..s.len())
                .map(|i| {
                    let x = s.row(i);
                    (0..3)
                        .map(|r| (0..3).map(|k| rot.matrix()[(r, k)] * x[k]).sum())
                        .collect()
                })
                .collect();
            set(&pts)
        };
        let rab = w2_empirical(&turn(&a), &turn(&b), 2048, 0).unwrap();
        assert_abs_diff_eq!(ab, rab, epsilon = 1e-9);
    }

    #[test]
    fn empty_set_is_size_error() {
        let a = sample_uniform(Manifold::S2, 3, 1).unwrap();
        let e = SampleSet::new(Manifold::S2, Array2::zeros((0, 3)), 0, "").unwrap();
        assert_eq!(w2_empirical(&a, &e, 10, 0).unwrap_err().class(), "SizeError");
    }
}
