//! Butterworth IIR design as second-order sections, and (zero-phase)
//! application.
//!
//! Design goes through the analog prototype: poles on the left unit
//! semicircle, frequency-prewarped and mapped with the bilinear transform.
//! Each section is normalized to unit gain in the passband reference
//! (DC for low-pass, Nyquist for high-pass).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    HighPass,
    LowPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    pub order: usize,
    pub fs_hz: f64,
}

impl FilterSpec {
    pub fn high_pass(cutoff_hz: f64, order: usize, fs_hz: f64) -> Self {
        Self { kind: FilterKind::HighPass, cutoff_hz, order, fs_hz }
    }

    pub fn low_pass(cutoff_hz: f64, order: usize, fs_hz: f64) -> Self {
        Self { kind: FilterKind::LowPass, cutoff_hz, order, fs_hz }
    }
}

/// Normalized biquad, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn is_first_order(&self) -> bool {
        self.b[2] == 0.0 && self.a[2] == 0.0
    }

    /// Transposed direct form II state for a constant unit input.
    fn steady_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2]);
        [gain - self.b[0], self.b[2] - self.a[2] * gain]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub spec: FilterSpec,
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.spec.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn gain_db(&self, f_hz: f64) -> f64 {
        20.0 * self.response(f_hz).norm().log10()
    }

    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| {
            let [_, a1, a2] = s.a;
            let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
            let r1 = (-a1 + disc) / 2.0;
            let r2 = (-a1 - disc) / 2.0;
            r1.norm() < 1.0 && r2.norm() < 1.0
        })
    }

    /// Number of taps of the equivalent direct-form filter.
    pub fn ntaps(&self) -> usize {
        let first_order = self.sections.iter().filter(|s| s.is_first_order()).count();
        2 * self.sections.len() + 1 - first_order.min(1)
    }

    /// Reflection padding used by zero-phase filtering.
    pub fn padlen(&self) -> usize {
        3 * self.ntaps()
    }

    fn run(&self, x: &mut [f64], initial: Option<f64>) {
        let mut level = initial.unwrap_or(0.0);
        for s in &self.sections {
            let state = match initial {
                Some(_) => s.steady_state().map(|v| v * level),
                None => [0.0; 2],
            };
            s.run(x, state);
            level *= s.dc_gain();
        }
    }
}

pub fn design_filter(spec: FilterSpec) -> Result<SosFilter> {
    let nyquist = spec.fs_hz / 2.0;
    if !(spec.fs_hz > 0.0) {
        return Err(Error::Filter(format!("sampling rate {} must be positive", spec.fs_hz)));
    }
    if !(spec.cutoff_hz > 0.0 && spec.cutoff_hz < nyquist) {
        return Err(Error::Filter(format!("cutoff {} Hz must lie in (0, {nyquist}) Hz", spec.cutoff_hz)));
    }
    if spec.order == 0 {
        return Err(Error::Filter("order must be at least 1".into()));
    }
    let n = spec.order;
    let fs2 = 2.0 * spec.fs_hz;
    let warped = fs2 * (PI * spec.cutoff_hz / spec.fs_hz).tan();
    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);

    let mut poles: Vec<Complex64> = (0..n)
        .map(|k| {
            let proto = Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64);
            let s = match spec.kind {
                FilterKind::LowPass => proto * warped,
                FilterKind::HighPass => warped / proto,
            };
            bilinear(s)
        })
        .filter(|z| z.im >= -1e-14)
        .collect();
    poles.sort_by(|a, b| a.norm().total_cmp(&b.norm()));

    let zero = match spec.kind {
        FilterKind::LowPass => -1.0,
        FilterKind::HighPass => 1.0,
    };
    let sections = poles
        .into_iter()
        .map(|p| {
            let mut section = if p.im.abs() <= 1e-14 {
                Biquad { b: [1.0, -zero, 0.0], a: [1.0, -p.re, 0.0] }
            } else {
                Biquad { b: [1.0, -2.0 * zero, 1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] }
            };
            let z_ref = Complex64::new(-zero, 0.0);
            let g = section.response(z_ref).norm();
            for b in section.b.iter_mut() {
                *b /= g;
            }
            section
        })
        .collect();
    Ok(SosFilter { spec, sections })
}

/// Filters `x`.
///
/// With `zero_phase` the cascade runs forward-backward over an odd-reflected
/// extension of `padlen()` samples per side, starting from steady-state
/// initial conditions. The backward-forward pass is averaged in, so the
/// operator commutes exactly with time reversal. Both passes have the squared
/// magnitude response and zero group delay.
pub fn apply_filter(x: &[f64], filter: &SosFilter, zero_phase: bool) -> Result<Vec<f64>> {
    if !zero_phase {
        let mut y = x.to_vec();
        filter.run(&mut y, None);
        return Ok(y);
    }
    let pad = filter.padlen();
    if x.len() <= pad {
        return Err(Error::Filter(format!(
            "signal of {} samples is too short for zero-phase padding of {pad}",
            x.len()
        )));
    }
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    let mut fb = ext.clone();
    forward_backward(filter, &mut fb);
    let mut bf = ext;
    bf.reverse();
    forward_backward(filter, &mut bf);
    bf.reverse();
    Ok(fb[pad..pad + n].iter().zip(&bf[pad..pad + n]).map(|(a, b)| 0.5 * (a + b)).collect())
}

fn forward_backward(filter: &SosFilter, x: &mut [f64]) {
    let x0 = x[0];
    filter.run(x, Some(x0));
    x.reverse();
    let y0 = x[0];
    filter.run(x, Some(y0));
    x.reverse();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Butterworth magnitude from the prewarped analog prototype:
    /// |H|² = 1 / (1 + (Ω/Ωc)^{2n}) (low-pass), with Ω = tan(πf/fs).
    fn analytic_gain(kind: FilterKind, f: f64, fc: f64, order: usize, fs: f64) -> f64 {
        let r = (PI * f / fs).tan() / (PI * fc / fs).tan();
        let r = match kind {
            FilterKind::LowPass => r,
            FilterKind::HighPass => 1.0 / r,
        };
        1.0 / (1.0 + r.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn highpass_50_cutoff_and_stopband() {
        let f = design_filter(FilterSpec::high_pass(50.0, 4, 1000.0)).unwrap();
        assert_eq!(f.sections.len(), 2);
        assert!(f.is_stable());
        assert!((f.gain_db(50.0) + 3.0103).abs() < 0.5);
        assert!(f.gain_db(5.0) <= -40.0, "{}", f.gain_db(5.0));
        assert!(f.gain_db(499.0).abs() < 0.01);
    }

    #[test]
    fn lowpass_10_passband() {
        let f = design_filter(FilterSpec::low_pass(10.0, 4, 1000.0)).unwrap();
        assert!(f.gain_db(0.0).abs() < 0.1);
        assert!((f.gain_db(10.0) + 3.0103).abs() < 0.5);
        assert!(f.is_stable());
    }

    #[test]
    fn response_matches_analytic_magnitude() {
        for order in 1..=7 {
            for kind in [FilterKind::LowPass, FilterKind::HighPass] {
                let spec = FilterSpec { kind, cutoff_hz: 37.0, order, fs_hz: 1000.0 };
                let f = design_filter(spec).unwrap();
                assert!(f.is_stable());
                for freq in [1.0, 10.0, 37.0, 80.0, 300.0, 480.0] {
                    let expect = analytic_gain(kind, freq, 37.0, order, 1000.0);
                    let got = f.response(freq).norm();
                    assert!((got - expect).abs() < 1e-9, "{kind:?} n={order} f={freq}: {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(design_filter(FilterSpec::low_pass(500.0, 4, 1000.0)).is_err());
        assert!(design_filter(FilterSpec::low_pass(600.0, 4, 1000.0)).is_err());
        assert!(design_filter(FilterSpec::low_pass(10.0, 0, 1000.0)).is_err());
        assert!(design_filter(FilterSpec::high_pass(0.0, 2, 1000.0)).is_err());
    }

    #[test]
    fn lowpass_kills_100hz() {
        let f = design_filter(FilterSpec::low_pass(10.0, 4, 1000.0)).unwrap();
        let x = sine(100.0, 1000.0, 4000);
        let y = apply_filter(&x, &f, true).unwrap();
        // Zero-phase squares the magnitude: (gain at 100 Hz)^2 ≈ 1e-8.
        let bound = f.response(100.0).norm().powi(2);
        assert!(bound < 1e-6);
        // Outside the edge transients of the odd extension.
        let inner = 1000..3000;
        let ratio = rms(&y[inner.clone()]) / rms(&x[inner]);
        assert!(ratio <= 0.01, "{ratio}");
    }

    #[test]
    fn zero_in_zero_out() {
        let f = design_filter(FilterSpec::high_pass(50.0, 4, 1000.0)).unwrap();
        let y = apply_filter(&vec![0.0; 500], &f, true).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_phase_keeps_pulse_peak() {
        let f = design_filter(FilterSpec::low_pass(30.0, 4, 1000.0)).unwrap();
        let x: Vec<f64> = (0..1001).map(|i| (-((i as f64 - 500.0) / 15.0).powi(2)).exp()).collect();
        let y = apply_filter(&x, &f, true).unwrap();
        let peak = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 500);
        let causal = apply_filter(&x, &f, false).unwrap();
        let lagged = causal.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(lagged > 500);
    }

    #[test]
    fn zero_phase_is_palindromic() {
        let f = design_filter(FilterSpec::high_pass(50.0, 4, 1000.0)).unwrap();
        let mut r = crate::rng::stream(5, &[]);
        use rand::Rng;
        let x: Vec<f64> = (0..3000).map(|_| r.random_range(-1.0..1.0)).collect();
        let forward = apply_filter(&x, &f, true).unwrap();
        let mut rev = x.clone();
        rev.reverse();
        let mut backward = apply_filter(&rev, &f, true).unwrap();
        backward.reverse();
        assert!(forward.iter().zip(&backward).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn too_short_for_padding() {
        let f = design_filter(FilterSpec::low_pass(10.0, 4, 1000.0)).unwrap();
        assert_eq!(f.padlen(), 15);
        assert!(apply_filter(&[1.0; 15], &f, true).is_err());
        assert!(apply_filter(&[1.0; 16], &f, true).is_ok());
    }
}
