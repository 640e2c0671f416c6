//! Neighborhood preservation of an embedding.

use ndarray::Array2;
use rayon::prelude::*;

use super::graph::sq_dist;
use crate::{Error, Result};

/// Indices of all other rows ordered by distance to row `i`, ties by index.
fn ranked(x: &Array2<f64>, i: usize) -> Vec<usize> {
    let xi = x.row(i).to_vec();
    let mut order: Vec<(f64, usize)> =
        (0..x.nrows()).filter(|&j| j != i).map(|j| (sq_dist(&xi, &x.row(j).to_vec()), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|p| p.1).collect()
}

/// `1 − 2/(n·k·(2n − 3k − 1)) · Σ_i Σ_{j ∈ U_k(i)} (r(i, j) − k)`, where
/// `U_k(i)` are embedding neighbors of `i` outside its `k` original neighbors
/// and `r(i, j)` is the 1-based rank of `j` among original-space neighbors.
pub fn trustworthiness(x: &Array2<f64>, e: &Array2<f64>, k: usize) -> Result<f64> {
    let n = x.nrows();
    if e.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: e.nrows() });
    }
    if k == 0 || 2 * k >= n {
        return Err(Error::invalid(format!("trustworthiness needs 0 < k < n/2, got k={k}, n={n}")));
    }
    let penalties: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let original = ranked(x, i);
            let mut rank = vec![0usize; n];
            for (r, &j) in original.iter().enumerate() {
                rank[j] = r + 1;
            }
            ranked(e, i).into_iter().take(k).filter(|&j| rank[j] > k).map(|j| (rank[j] - k) as f64).sum()
        })
        .collect();
    let total: f64 = penalties.iter().sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, n: usize) -> Array2<f64> {
        let mut r = rng::stream(seed, &[]);
        Array2::from_shape_fn((n, 5), |(i, c)| {
            let center = if (i % 4) == c { 20.0 } else { 0.0 };
            center + r.sample::<f64, _>(StandardNormal)
        })
    }

    #[test]
    fn identity_is_perfect() {
        let x = blobs(1, 60);
        assert_eq!(trustworthiness(&x, &x, 5).unwrap(), 1.0);
    }

    #[test]
    fn random_embedding_is_poor() {
        let x = blobs(2, 200);
        let mut r = rng::stream(9, &[]);
        let e = Array2::from_shape_fn((200, 2), |_| r.random_range(0.0..1.0));
        let t = trustworthiness(&x, &e, 10).unwrap();
        assert!(t < 0.8, "{t}");
    }

    #[test]
    fn rotation_invariant() {
        let x = blobs(3, 80);
        let mut r = rng::stream(4, &[]);
        let e = Array2::from_shape_fn((80, 2), |(i, c)| x[[i, c]] + r.random_range(-3.0..3.0));
        let (s, c) = (0.7_f64.sin(), 0.7_f64.cos());
        let rotated = Array2::from_shape_fn((80, 2), |(i, d)| {
            if d == 0 {
                c * e[[i, 0]] - s * e[[i, 1]]
            } else {
                s * e[[i, 0]] + c * e[[i, 1]]
            }
        });
        let a = trustworthiness(&x, &e, 7).unwrap();
        let b = trustworthiness(&x, &rotated, 7).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn k_bound() {
        let x = blobs(1, 20);
        assert!(trustworthiness(&x, &x, 10).is_err());
        assert!(trustworthiness(&x, &x, 9).is_ok());
    }
}
