//! Initialization and stochastic layout optimization.
//!
//! The optimizer walks the edge list in row order. Each head point owns a
//! random stream keyed by its row position, so the result depends only on the
//! seed and on the row order of the graph.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::FuzzyGraph;
use crate::{rng, Error, Result};

const STREAM_INIT: u64 = 0x1417;
const STREAM_LAYOUT: u64 = 0x5CD0;
const STREAM_TRANSFORM: u64 = 0x7F0A;
const GRAD_CLIP: f64 = 4.0;
const SPECTRAL_TOL: f64 = 1e-6;
const SPECTRAL_MAX_ITERS: usize = 2000;
const SPECTRAL_EXTRA: usize = 4;
/// Coordinates are rescaled per dimension to `[0, LAYOUT_SCALE]` before SGD.
const LAYOUT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Spectral,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutParams {
    pub n_components: usize,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
}

/// Breadth-first check that every vertex is reachable from vertex 0.
fn is_connected(fg: &FuzzyGraph) -> bool {
    let n = fg.n_points();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for (j, w) in fg.row(i) {
            if w > 0.0 && !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and column eigenvectors (`vecs[r][c]`).
fn jacobi_eigen(mut m: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let q = m.len();
    let mut v: Vec<Vec<f64>> = (0..q).map(|i| (0..q).map(|j| f64::from(i == j)).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..q)
            .flat_map(|i| (0..q).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..q {
            for r in p + 1..q {
                if m[p][r].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[r][r] - m[p][p]) / (2.0 * m[p][r]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..q {
                    let (mkp, mkr) = (m[k][p], m[k][r]);
                    m[k][p] = c * mkp - s * mkr;
                    m[k][r] = s * mkp + c * mkr;
                }
                for k in 0..q {
                    let (mpk, mrk) = (m[p][k], m[r][k]);
                    m[p][k] = c * mpk - s * mrk;
                    m[r][k] = s * mpk + c * mrk;
                }
                for row in v.iter_mut() {
                    let (vp, vr) = (row[p], row[r]);
                    row[p] = c * vp - s * vr;
                    row[r] = s * vp + c * vr;
                }
            }
        }
    }
    ((0..q).map(|i| m[i][i]).collect(), v)
}

/// Bottom non-trivial eigenvectors of the normalized Laplacian
/// `I − D^{-1/2} W D^{-1/2}`.
///
/// Subspace iteration on `S = (I + D^{-1/2} W D^{-1/2}) / 2`, whose spectrum
/// lies in `[0, 1]`, with the trivial eigenvector `D^{1/2}·1` deflated and a
/// Rayleigh-Ritz step each sweep. The block carries a few extra vectors to
/// speed convergence. Stops when every wanted Ritz pair has residual below
/// 1e-6. `None` if the graph is disconnected.
pub fn spectral_init(fg: &FuzzyGraph, dim: usize, seed: u64) -> Option<Array2<f64>> {
    let n = fg.n_points();
    if n <= dim + 1 || !is_connected(fg) {
        return None;
    }
    let deg: Vec<f64> = (0..n).map(|i| fg.row(i).map(|(_, w)| w).sum()).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trivial: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    normalize(&mut trivial);

    let apply = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mv: f64 = fg.row(i).map(|(j, w)| w * inv_sqrt[j] * v[j]).sum();
                0.5 * (v[i] + inv_sqrt[i] * mv)
            })
            .collect()
    };
    let orthonormalize = |block: &mut Vec<Vec<f64>>| {
        for c in 0..block.len() {
            let (done, rest) = block.split_at_mut(c);
            let v = &mut rest[0];
            for _ in 0..2 {
                let p = dot(v, &trivial);
                v.iter_mut().zip(&trivial).for_each(|(x, t)| *x -= p * t);
                for u in done.iter() {
                    let p = dot(v, u);
                    v.iter_mut().zip(u).for_each(|(x, t)| *x -= p * t);
                }
            }
            normalize(v);
        }
    };

    let q = (dim + SPECTRAL_EXTRA).min(n - 1);
    let mut block: Vec<Vec<f64>> = (0..q)
        .map(|c| {
            let mut r = rng::stream(seed, &[STREAM_INIT, c as u64]);
            (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
        })
        .collect();
    orthonormalize(&mut block);
    for _ in 0..SPECTRAL_MAX_ITERS {
        let images: Vec<Vec<f64>> = block.iter().map(|v| apply(v)).collect();
        let h: Vec<Vec<f64>> = (0..q).map(|a| (0..q).map(|b| dot(&block[a], &images[b])).collect()).collect();
        let h: Vec<Vec<f64>> = (0..q).map(|a| (0..q).map(|b| 0.5 * (h[a][b] + h[b][a])).collect()).collect();
        let (vals, vecs) = jacobi_eigen(h);
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        let combine = |src: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (r, v) in src.iter().enumerate() {
                let coef = vecs[r][col];
                out.iter_mut().zip(v).for_each(|(o, x)| *o += coef * x);
            }
            out
        };
        let ritz: Vec<Vec<f64>> = order.iter().map(|&c| combine(&block, c)).collect();
        let ritz_images: Vec<Vec<f64>> = order.iter().map(|&c| combine(&images, c)).collect();
        let converged = (0..dim).all(|c| {
            let theta = vals[order[c]];
            let res: f64 = ritz_images[c].iter().zip(&ritz[c]).map(|(y, x)| (y - theta * x).powi(2)).sum();
            res.sqrt() < SPECTRAL_TOL
        });
        if converged {
            block = ritz;
            break;
        }
        block = ritz_images;
        orthonormalize(&mut block);
    }
    if block.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Array2::from_shape_fn((n, dim), |(i, c)| block[c][i]))
}

pub fn random_init(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut out = Array2::zeros((n, dim));
    for i in 0..n {
        let mut r = rng::stream(seed, &[STREAM_INIT, u64::MAX, i as u64]);
        for c in 0..dim {
            out[[i, c]] = r.random_range(-10.0..10.0);
        }
    }
    out
}

/// Per-dimension affine map onto `[0, 10]`; constant dimensions map to 0.
fn rescale(e: &mut Array2<f64>) {
    for mut col in e.columns_mut() {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        col.mapv_inplace(|v| if span > 0.0 { LAYOUT_SCALE * (v - lo) / span } else { 0.0 });
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn attraction(d2: f64, a: f64, b: f64) -> f64 {
    if d2 > 0.0 {
        -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
    } else {
        0.0
    }
}

fn repulsion(d2: f64, a: f64, b: f64) -> f64 {
    if d2 > 0.0 {
        2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
    } else {
        0.0
    }
}

/// Edge sampling schedule: edges fire every `max_w / w` epochs; edges with
/// weight below `max_w / n_epochs` never fire and are dropped.
struct Schedule {
    period: Vec<f64>,
    next: Vec<f64>,
    neg_period: Vec<f64>,
    next_neg: Vec<f64>,
}

impl Schedule {
    fn new(weights: &[f64], n_epochs: usize, neg_rate: usize) -> Schedule {
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        let period: Vec<f64> =
            weights.iter().map(|&w| if w > 0.0 && w >= max_w / n_epochs as f64 { max_w / w } else { -1.0 }).collect();
        let neg_period: Vec<f64> = period.iter().map(|p| p / neg_rate.max(1) as f64).collect();
        Schedule { next: period.clone(), next_neg: neg_period.clone(), period, neg_period }
    }

    /// Number of negative samples when edge `e` fires at `epoch`, or `None`
    /// if it does not fire.
    fn fire(&mut self, e: usize, epoch: usize, neg_rate: usize) -> Option<usize> {
        let p = self.period[e];
        if p <= 0.0 || self.next[e] > epoch as f64 {
            return None;
        }
        self.next[e] += p;
        let n_neg =
            if neg_rate == 0 { 0 } else { ((epoch as f64 - self.next_neg[e]) / self.neg_period[e]).max(0.0) as usize };
        self.next_neg[e] += n_neg as f64 * self.neg_period[e];
        Some(n_neg)
    }
}

struct Sgd<'a> {
    a: f64,
    b: f64,
    head: &'a mut Array2<f64>,
}

impl Sgd<'_> {
    fn pull(&mut self, i: usize, other: &[f64], alpha: f64) -> Vec<f64> {
        let d2: f64 = (0..other.len()).map(|c| (self.head[[i, c]] - other[c]).powi(2)).sum();
        let coeff = attraction(d2, self.a, self.b);
        let mut moves = Vec::with_capacity(other.len());
        for (c, &o) in other.iter().enumerate() {
            let g = clip(coeff * (self.head[[i, c]] - o)) * alpha;
            self.head[[i, c]] += g;
            moves.push(g);
        }
        moves
    }

    fn push(&mut self, i: usize, other: &[f64], alpha: f64) {
        let d2: f64 = (0..other.len()).map(|c| (self.head[[i, c]] - other[c]).powi(2)).sum();
        let coeff = repulsion(d2, self.a, self.b);
        for (c, &o) in other.iter().enumerate() {
            let g = if coeff > 0.0 { clip(coeff * (self.head[[i, c]] - o)) } else { GRAD_CLIP };
            self.head[[i, c]] += g * alpha;
        }
    }
}

fn check_params(p: &LayoutParams) -> Result<()> {
    if p.n_components == 0 {
        return Err(Error::invalid("n_components must be positive"));
    }
    if !(p.learning_rate >= 0.0) || !(p.a > 0.0) || !(p.b > 0.0) {
        return Err(Error::invalid("learning rate must be ≥ 0 and a, b > 0"));
    }
    Ok(())
}

/// Fuzzy cross-entropy SGD with negative sampling. Learning rate decays
/// linearly to 0; gradient components are clipped to ±4.
pub fn optimize_embedding(fg: &FuzzyGraph, init: Init, p: &LayoutParams) -> Result<(Array2<f64>, Init)> {
    check_params(p)?;
    let n = fg.n_points();
    if n < 10 {
        return Err(Error::invalid(format!("layout needs at least 10 points, got {n}")));
    }
    if fg.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("non-finite graph weight".into()));
    }
    let (mut emb, used) = match init {
        Init::Spectral => match spectral_init(fg, p.n_components, p.seed) {
            Some(e) => (e, Init::Spectral),
            None => {
                log::debug!("graph disconnected; random initialization");
                (random_init(n, p.n_components, p.seed), Init::Random)
            }
        },
        Init::Random => (random_init(n, p.n_components, p.seed), Init::Random),
    };
    rescale(&mut emb);

    let heads: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, fg.indptr[i + 1] - fg.indptr[i])).collect();
    let mut sched = Schedule::new(&fg.weights, p.n_epochs, p.negative_sample_rate);
    let mut streams: Vec<ChaCha8Rng> = (0..n).map(|i| rng::stream(p.seed, &[STREAM_LAYOUT, i as u64])).collect();
    let dim = p.n_components;
    let mut other = vec![0.0; dim];
    for epoch in 0..p.n_epochs {
        let alpha = p.learning_rate * (1.0 - epoch as f64 / p.n_epochs as f64);
        for (e, (&i, &j)) in heads.iter().zip(&fg.indices).enumerate() {
            let Some(n_neg) = sched.fire(e, epoch, p.negative_sample_rate) else {
                continue;
            };
            other.iter_mut().enumerate().for_each(|(c, o)| *o = emb[[j, c]]);
            let mut sgd = Sgd { a: p.a, b: p.b, head: &mut emb };
            let moves = sgd.pull(i, &other, alpha);
            for (c, g) in moves.into_iter().enumerate() {
                emb[[j, c]] -= g;
            }
            for _ in 0..n_neg {
                let k = streams[i].random_range(0..n);
                if k == i {
                    continue;
                }
                other.iter_mut().enumerate().for_each(|(c, o)| *o = emb[[k, c]]);
                Sgd { a: p.a, b: p.b, head: &mut emb }.push(i, &other, alpha);
            }
        }
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("embedding diverged to non-finite coordinates".into()));
    }
    Ok((emb, used))
}

/// Places one new point against a frozen reference embedding.
///
/// `neighbors` are `(reference index, membership)`; the point starts at their
/// membership-weighted mean and is refined with attraction to those neighbors
/// and repulsion from uniformly sampled reference points. Only the new point
/// moves. During fitting every edge is listed from both endpoints, so a point
/// receives two pulls per edge period against one batch of negatives; each
/// firing here pulls twice to keep that balance.
pub(crate) fn place_point(
    reference: &Array2<f64>,
    neighbors: &[(usize, f64)],
    p: &LayoutParams,
    point_key: u64,
) -> Vec<f64> {
    let dim = reference.ncols();
    let total: f64 = neighbors.iter().map(|n| n.1).sum();
    let mut pos = Array2::zeros((1, dim));
    for c in 0..dim {
        pos[[0, c]] = if total > 0.0 {
            neighbors.iter().map(|&(j, w)| w * reference[[j, c]]).sum::<f64>() / total
        } else {
            neighbors.iter().map(|&(j, _)| reference[[j, c]]).sum::<f64>() / neighbors.len() as f64
        };
    }
    let weights: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
    let mut sched = Schedule::new(&weights, p.n_epochs, p.negative_sample_rate);
    let mut stream = rng::stream(p.seed, &[STREAM_TRANSFORM, point_key]);
    let m = reference.nrows();
    let mut other = vec![0.0; dim];
    for epoch in 0..p.n_epochs {
        let alpha = p.learning_rate * (1.0 - epoch as f64 / p.n_epochs as f64);
        for (e, &(j, _)) in neighbors.iter().enumerate() {
            let Some(n_neg) = sched.fire(e, epoch, p.negative_sample_rate) else {
                continue;
            };
            other.iter_mut().enumerate().for_each(|(c, o)| *o = reference[[j, c]]);
            let mut sgd = Sgd { a: p.a, b: p.b, head: &mut pos };
            for _ in 0..2 {
                sgd.pull(0, &other, alpha);
            }
            for _ in 0..n_neg {
                let k = stream.random_range(0..m);
                other.iter_mut().enumerate().for_each(|(c, o)| *o = reference[[k, c]]);
                sgd.push(0, &other, alpha);
            }
        }
    }
    pos.row(0).to_vec()
}
