//! Small descriptive statistics shared across modules.

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson inputs differ in length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_extremes() {
        let a = [0.1, 0.5, 0.3, 0.9];
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(spearman(&a, &[1.0, 5.0, 3.0, 9.0]), 1.0);
        assert!((spearman(&a, &rev) + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_self_and_antisymmetry(v in proptest::collection::vec(-1e3f64..1e3, 3..30)) {
            prop_assume!(v.iter().any(|x| *x != v[0]));
            prop_assert!((spearman(&v, &v) - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let w: Vec<f64> = v.iter().map(|x| x.sin()).collect();
            prop_assert!((spearman(&v, &w) + spearman(&neg, &w)).abs() < 1e-12);
        }
    }
}
