//! Iterative radix-2 FFT.
//!
//! Inputs whose length is not a power of two are zero-padded to the next power
//! of two; the padded length is what determines the frequency grid.

use std::f64::consts::PI;

use num_complex::Complex64;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place forward transform. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// In-place inverse transform, scaled by 1/N.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    transform(buf, true);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(is_power_of_two(n), "radix-2 FFT needs a power-of-two length, got {n}");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles computed directly per index; recurrence would accumulate error.
        let twiddles: Vec<Complex64> =
            (0..half).map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Forward FFT of a real signal zero-padded to the next power of two.
pub fn rfft_padded(x: &[f64]) -> Vec<Complex64> {
    let n = x.len().next_power_of_two();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// O(N²) DFT straight from the definition.
    pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, angle)
                    })
                    .sum()
            })
            .collect()
    }
}
