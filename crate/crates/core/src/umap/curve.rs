//! Low-dimensional similarity kernel `1 / (1 + a·x^(2b))`.

use crate::{Error, Result};

const SAMPLES: usize = 300;

/// Target membership: flat up to `min_dist`, exponential decay beyond.
fn target(x: f64, min_dist: f64, spread: f64) -> f64 {
    if x <= min_dist {
        1.0
    } else {
        (-(x - min_dist) / spread).exp()
    }
}

pub fn kernel(x: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * x.powf(2.0 * b))
}

fn grid(spread: f64) -> impl Iterator<Item = f64> {
    let step = 3.0 * spread / (SAMPLES - 1) as f64;
    (0..SAMPLES).map(move |i| i as f64 * step)
}

/// Root-mean-square residual of the kernel against the target over the fit grid.
pub fn fit_residual(a: f64, b: f64, min_dist: f64, spread: f64) -> f64 {
    let sse: f64 = grid(spread).map(|x| (kernel(x, a, b) - target(x, min_dist, spread)).powi(2)).sum();
    (sse / SAMPLES as f64).sqrt()
}

/// Least-squares `(a, b)` over 300 points on `[0, 3·spread]`, by
/// Levenberg-Marquardt from `(1, 1)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64)> {
    if !(spread > 0.0) {
        return Err(Error::invalid(format!("spread {spread} must be positive")));
    }
    if !(min_dist >= 0.0) {
        return Err(Error::invalid(format!("min_dist {min_dist} must be non-negative")));
    }
    let xs: Vec<f64> = grid(spread).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target(x, min_dist, spread)).collect();
    let sse = |a: f64, b: f64| -> f64 { xs.iter().zip(&ys).map(|(&x, &y)| (kernel(x, a, b) - y).powi(2)).sum() };

    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut lambda = 1e-3;
    let mut current = sse(a, b);
    for _ in 0..500 {
        // Normal equations JᵀJ δ = −Jᵀr for the 2-parameter model.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let u = x.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * u);
            let r = f - y;
            let da = -u * f * f;
            let db = -2.0 * a * u * x.ln() * f * f;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let candidate = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
            if candidate < current {
                let rel = (current - candidate) / current.max(f64::MIN_POSITIVE);
                a = na;
                b = nb;
                current = candidate;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
        return Err(Error::Numeric(format!("kernel fit diverged: a={a}, b={b}")));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: coarse-to-fine exhaustive grid over (a, b).
    fn grid_search(min_dist: f64, spread: f64) -> (f64, f64) {
        let (mut best, mut ba, mut bb) = (f64::INFINITY, 0.0, 0.0);
        let (mut a_lo, mut a_hi, mut b_lo, mut b_hi) = (0.05, 5.0, 0.2, 2.5);
        for _ in 0..4 {
            for i in 0..=80 {
                for j in 0..=80 {
                    let a = a_lo + (a_hi - a_lo) * i as f64 / 80.0;
                    let b = b_lo + (b_hi - b_lo) * j as f64 / 80.0;
                    let r = fit_residual(a, b, min_dist, spread);
                    if r < best {
                        (best, ba, bb) = (r, a, b);
                    }
                }
            }
            let (wa, wb) = ((a_hi - a_lo) / 10.0, (b_hi - b_lo) / 10.0);
            (a_lo, a_hi, b_lo, b_hi) = ((ba - wa).max(1e-3), ba + wa, (bb - wb).max(1e-3), bb + wb);
        }
        (ba, bb)
    }

    #[test]
    fn default_parameters() {
        let (a, b) = fit_ab(0.1, 1.0).unwrap();
        assert!((a - 1.58).abs() <= 0.05, "a = {a}");
        assert!((b - 0.90).abs() <= 0.05, "b = {b}");
        let (oa, ob) = grid_search(0.1, 1.0);
        assert!((a - oa).abs() <= 0.01 && (b - ob).abs() <= 0.01, "{a},{b} vs {oa},{ob}");
        // The least-squares optimum itself leaves RMS ≈ 0.0162 for this target.
        let rms = fit_residual(a, b, 0.1, 1.0);
        assert!(rms <= fit_residual(oa, ob, 0.1, 1.0) + 1e-9);
        assert!((rms - 0.0162).abs() < 5e-4, "{rms}");
    }

    #[test]
    fn kernel_at_origin_is_one() {
        let (a, b) = fit_ab(0.1, 1.0).unwrap();
        assert_eq!(kernel(0.0, a, b), 1.0);
    }

    #[test]
    fn larger_min_dist_gives_smaller_a() {
        let (a1, _) = fit_ab(0.1, 1.0).unwrap();
        let (a5, _) = fit_ab(0.5, 1.0).unwrap();
        assert!(a5 < a1, "{a5} vs {a1}");
        let (oa, ob) = grid_search(0.5, 1.0);
        let (a, b) = fit_ab(0.5, 1.0).unwrap();
        assert!((a - oa).abs() <= 0.01 && (b - ob).abs() <= 0.01);
    }

    #[test]
    fn rejects_bad_spread() {
        assert!(fit_ab(0.1, 0.0).is_err());
        assert!(fit_ab(0.1, -1.0).is_err());
    }
}
