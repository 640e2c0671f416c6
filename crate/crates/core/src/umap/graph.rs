//! Exact neighbor graph, bandwidth calibration and the symmetric fuzzy graph.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Row `i` lists the `k` nearest other points, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub indices: Array2<usize>,
    pub distances: Array2<f64>,
    pub metric: Metric,
    pub k: usize,
}

impl NeighborGraph {
    pub fn n_points(&self) -> usize {
        self.indices.nrows()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest rows of `reference` to `query`, excluding `skip`.
/// Ties go to the smaller index.
pub(crate) fn nearest(
    reference: ArrayView2<'_, f64>,
    query: &[f64],
    k: usize,
    skip: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = reference
        .outer_iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, row)| (j, sq_dist(query, row.as_slice().expect("standard layout"))))
        .collect();
    let by_dist = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k, by_dist);
        all.truncate(k);
    }
    all.sort_by(by_dist);
    all.into_iter().map(|(j, d2)| (j, d2.sqrt())).collect()
}

/// Brute-force Euclidean k-nearest-neighbor graph.
pub fn knn_graph(x: &Array2<f64>, k: usize) -> Result<NeighborGraph> {
    let n = x.nrows();
    if k < 1 || k >= n {
        return Err(Error::invalid(format!("k = {k} needs 1 ≤ k < n = {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let x = x.as_standard_layout();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(x.view(), x.row(i).as_slice().expect("standard layout"), k, Some(i)))
        .collect();
    let mut indices = Array2::zeros((n, k));
    let mut distances = Array2::zeros((n, k));
    for (i, row) in rows.iter().enumerate() {
        for (c, &(j, d)) in row.iter().enumerate() {
            indices[[i, c]] = j;
            distances[[i, c]] = d;
        }
    }
    Ok(NeighborGraph { indices, distances, metric: Metric::Euclidean, k })
}

const CALIBRATION_ITERS: usize = 64;
const CALIBRATION_TOL: f64 = 1e-5;
const MIN_SIGMA_SCALE: f64 = 1e-3;

/// Local connectivity `rho` and bandwidth `sigma` for one ascending distance row.
///
/// `sigma` solves `Σ_j exp(−max(0, d_j − rho)/sigma) = log2(k)` by bisection.
/// The search runs on distances divided by their mean, so scaling a row
/// scales `sigma` by the same factor. `sigma` never drops below
/// `1e-3 · mean(d)`.
pub fn smooth_knn_calibrate(distances: &[f64], k: usize) -> (f64, f64) {
    let rho = distances.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    if mean <= 0.0 {
        return (rho, MIN_SIGMA_SCALE);
    }
    let target = (k as f64).log2();
    let scaled_rho = rho / mean;
    let gaps: Vec<f64> = distances.iter().map(|&d| (d / mean - scaled_rho).max(0.0)).collect();
    let total = |s: f64| gaps.iter().map(|g| (-g / s).exp()).sum::<f64>();

    let (mut lo, mut hi, mut mid) = (0.0_f64, f64::INFINITY, 1.0_f64);
    for _ in 0..CALIBRATION_ITERS {
        let psum = total(mid);
        if (psum - target).abs() < CALIBRATION_TOL {
            break;
        }
        if psum > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    (rho, mid.max(MIN_SIGMA_SCALE) * mean)
}

/// Symmetric sparse weights in compressed-row form, plus per-point calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FuzzyGraph {
    pub fn n_points(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// `(column, weight)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(p) => self.weights[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n_points();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for (j, w) in self.row(i) {
                out[[i, j]] = w;
            }
        }
        out
    }
}

/// Directed membership strength of a neighbor at distance `d`.
pub fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    (-(d - rho).max(0.0) / sigma).exp()
}

/// Probabilistic union `a + b − a·b` of two memberships; exactly 1 when
/// either input is 1, and symmetric bitwise.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    (hi + lo * (1.0 - hi)).min(1.0)
}

/// Symmetrizes the calibrated directed memberships with [`fuzzy_union`].
pub fn fuzzy_simplicial_set(g: &NeighborGraph) -> FuzzyGraph {
    let n = g.n_points();
    let calib: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| smooth_knn_calibrate(g.distances.row(i).as_slice().expect("standard layout"), g.k))
        .collect();
    let directed = |i: usize, j: usize| -> f64 {
        let (rho, sigma) = calib[i];
        g.indices.row(i).iter().position(|&c| c == j).map_or(0.0, |c| membership(g.distances[[i, c]], rho, sigma))
    };

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for &j in g.indices.row(i) {
            if j != i {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    indptr.push(0);
    for (i, row) in rows.iter_mut().enumerate() {
        row.sort_unstable();
        row.dedup();
        for &j in row.iter() {
            // Evaluated in (min, max) order so both triangle halves match bitwise.
            let (p, q) = (i.min(j), i.max(j));
            let (a, b) = (directed(p, q), directed(q, p));
            let w = fuzzy_union(a, b);
            if w > 0.0 {
                indices.push(j);
                weights.push(w);
            }
        }
        indptr.push(indices.len());
    }
    FuzzyGraph {
        indptr,
        indices,
        weights,
        rho: calib.iter().map(|c| c.0).collect(),
        sigma: calib.iter().map(|c| c.1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut r = rng::stream(seed, &[]);
        Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
    }

    /// Independent oracle: full distance matrix, stable sort per row.
    fn oracle_knn(x: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
        let n = x.nrows();
        (0..n)
            .map(|i| {
                let mut order: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
                        (d.sqrt(), j)
                    })
                    .collect();
                order.sort_by(|a, b| a.partial_cmp(b).unwrap());
                order.into_iter().take(k).map(|p| p.1).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_middle_point() {
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let g = knn_graph(&x, 2).unwrap();
        let mut mid: Vec<usize> = g.indices.row(1).to_vec();
        mid.sort();
        assert_eq!(mid, vec![0, 2]);
        assert_eq!(g.indices.row(0).to_vec(), vec![1, 2]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let x = random_matrix(3, 50, 5);
        let g = knn_graph(&x, 10).unwrap();
        let expect = oracle_knn(&x, 10);
        for i in 0..50 {
            assert_eq!(g.indices.row(i).to_vec(), expect[i]);
            assert!(g.distances.row(i).to_vec().windows(2).all(|w| w[0] <= w[1]));
            assert!(!g.indices.row(i).iter().any(|&j| j == i));
        }
    }

    #[test]
    fn duplicates_come_first() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 5.0, 0.0, 1.0]).unwrap();
        let g = knn_graph(&x, 2).unwrap();
        assert_eq!(g.indices.row(0).to_vec(), vec![2, 3]);
        assert_eq!(g.distances[[0, 0]], 0.0);
        assert_eq!(g.indices.row(2).to_vec(), vec![0, 3]);
    }

    #[test]
    fn k_must_be_below_n() {
        let x = random_matrix(1, 5, 2);
        assert!(knn_graph(&x, 5).is_err());
        assert!(knn_graph(&x, 4).is_ok());
    }

    fn calibrated_sum(d: &[f64], rho: f64, sigma: f64) -> f64 {
        d.iter().map(|&v| membership(v, rho, sigma)).sum()
    }

    #[test]
    fn equal_distances_hit_lower_bound() {
        let d = [2.0; 6];
        let (rho, sigma) = smooth_knn_calibrate(&d, 6);
        assert_eq!(rho, 2.0);
        assert!((sigma - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn calibration_reaches_target() {
        let d = [0.5, 0.9, 1.3, 2.2];
        let (rho, sigma) = smooth_knn_calibrate(&d, 4);
        assert_eq!(rho, 0.5);
        assert!((calibrated_sum(&d, rho, sigma) - 2.0).abs() <= 1e-4);
    }

    #[test]
    fn zero_distances_are_skipped_for_rho() {
        let (rho, _) = smooth_knn_calibrate(&[0.0, 0.0, 0.7, 1.0], 4);
        assert_eq!(rho, 0.7);
        let (rho, sigma) = smooth_knn_calibrate(&[0.0; 4], 4);
        assert_eq!(rho, 0.0);
        assert!(sigma > 0.0);
    }

    #[test]
    fn nearest_neighbor_weight_is_one() {
        let x = random_matrix(8, 30, 3);
        let g = knn_graph(&x, 5).unwrap();
        let fg = fuzzy_simplicial_set(&g);
        for i in 0..30 {
            let j = g.indices[[i, 0]];
            assert_eq!(fg.weight(i, j), 1.0);
        }
    }

    #[test]
    fn union_formula() {
        assert!((fuzzy_union(0.8, 0.5) - 0.9).abs() < 1e-15);
        let x = random_matrix(2, 40, 4);
        let g = knn_graph(&x, 6).unwrap();
        let fg = fuzzy_simplicial_set(&g);
        for i in 0..40 {
            for (c, &j) in g.indices.row(i).iter().enumerate() {
                let wij = membership(g.distances[[i, c]], fg.rho[i], fg.sigma[i]);
                let wji = g
                    .indices
                    .row(j)
                    .iter()
                    .position(|&q| q == i)
                    .map_or(0.0, |q| membership(g.distances[[j, q]], fg.rho[j], fg.sigma[j]));
                assert!((fg.weight(i, j) - fuzzy_union(wij, wji)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fuzzy_graph_symmetric_in_range(seed in any::<u64>(), n in 8usize..40, d in 1usize..6, k in 2usize..7) {
            let x = random_matrix(seed, n, d);
            let g = knn_graph(&x, k).unwrap();
            let fg = fuzzy_simplicial_set(&g);
            let dense = fg.to_dense();
            for i in 0..n {
                prop_assert_eq!(dense[[i, i]], 0.0);
                for j in 0..n {
                    prop_assert!((dense[[i, j]] - dense[[j, i]]).abs() <= 1e-12);
                    let w = dense[[i, j]];
                    prop_assert!(w == 0.0 || (w > 0.0 && w <= 1.0));
                }
            }
        }

        #[test]
        fn sigma_scales_with_distances(
            mut d in proptest::collection::vec(0.01f64..10.0, 3..20),
            c in 0.01f64..100.0,
        ) {
            d.sort_by(f64::total_cmp);
            let k = d.len();
            let (r1, s1) = smooth_knn_calibrate(&d, k);
            let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
            let (r2, s2) = smooth_knn_calibrate(&scaled, k);
            prop_assert!((r2 - r1 * c).abs() <= 1e-12 * r2.abs().max(1.0));
            prop_assert!((s2 - s1 * c).abs() <= 1e-6 * s2, "{} vs {}", s2, s1 * c);
        }
    }
}
