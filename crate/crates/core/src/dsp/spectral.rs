//! Amplitude spectrum, Welch PSD and magnitude-squared coherence.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{fft_in_place, rfft_padded};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralKind {
    Psd,
    Coherence,
    AmplitudeSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub kind: SpectralKind,
    pub freqs_hz: Vec<f64>,
    pub values: Vec<f64>,
    /// Segment length (whole signal for the amplitude spectrum).
    pub nperseg: usize,
    /// Samples shared by consecutive segments.
    pub overlap: usize,
    pub n_segments: usize,
    /// Transform length after zero-padding, when it differs from `nperseg`.
    pub padded_len: Option<usize>,
}

impl SpectralEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,value\n");
        for (f, v) in self.freqs_hz.iter().zip(&self.values) {
            out.push_str(&format!("{f:.6},{v:.9e}\n"));
        }
        out
    }

    /// Frequency of the largest value, ignoring bins below `min_hz`.
    pub fn peak_hz(&self, min_hz: f64) -> Option<f64> {
        self.freqs_hz
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= min_hz)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
    }

    /// Mean of `values` over bins in `[lo, hi]`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> f64 {
        let (sum, n) = self
            .freqs_hz
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| (lo..=hi).contains(*f))
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

fn one_sided_freqs(nfft: usize, fs: f64) -> Vec<f64> {
    (0..=nfft / 2).map(|k| k as f64 * fs / nfft as f64).collect()
}

/// One-sided amplitude spectrum `|X_k|·2/N` (DC and Nyquist not doubled),
/// where `N` is the unpadded signal length.
pub fn fft_magnitude(x: &[f64], fs: f64) -> Result<SpectralEstimate> {
    if x.is_empty() {
        return Err(Error::invalid("fft_magnitude of empty signal"));
    }
    let spectrum = rfft_padded(x);
    let nfft = spectrum.len();
    let n = x.len() as f64;
    let values = (0..=nfft / 2)
        .map(|k| {
            let scale = if k == 0 || (nfft > 1 && k == nfft / 2) { 1.0 } else { 2.0 };
            spectrum[k].norm() * scale / n
        })
        .collect();
    Ok(SpectralEstimate {
        kind: SpectralKind::AmplitudeSpectrum,
        freqs_hz: one_sided_freqs(nfft, fs),
        values,
        nperseg: x.len(),
        overlap: 0,
        n_segments: 1,
        padded_len: (nfft != x.len()).then_some(nfft),
    })
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Windowed, mean-removed segment spectra shared by PSD and coherence.
struct Segments {
    spectra: Vec<Vec<Complex64>>,
    nfft: usize,
    nperseg: usize,
    noverlap: usize,
    /// Density scaling: 1 / (fs · Σw²).
    scale: f64,
}

impl Segments {
    fn new(x: &[f64], fs: f64, nperseg: usize, overlap_fraction: f64) -> Result<Self> {
        if nperseg == 0 || nperseg > x.len() {
            return Err(Error::invalid(format!("nperseg {nperseg} must be in 1..={}", x.len())));
        }
        if !(0.0..1.0).contains(&overlap_fraction) {
            return Err(Error::invalid(format!("overlap fraction {overlap_fraction} outside [0, 1)")));
        }
        let noverlap = (nperseg as f64 * overlap_fraction).floor() as usize;
        let step = nperseg - noverlap;
        let window = hann(nperseg);
        let nfft = nperseg.next_power_of_two();
        let mut spectra = Vec::new();
        let mut start = 0;
        while start + nperseg <= x.len() {
            let seg = &x[start..start + nperseg];
            let mean = seg.iter().sum::<f64>() / nperseg as f64;
            let mut buf: Vec<Complex64> =
                seg.iter().zip(&window).map(|(&v, &w)| Complex64::new((v - mean) * w, 0.0)).collect();
            buf.resize(nfft, Complex64::new(0.0, 0.0));
            fft_in_place(&mut buf);
            buf.truncate(nfft / 2 + 1);
            spectra.push(buf);
            start += step;
        }
        let s2: f64 = window.iter().map(|w| w * w).sum();
        Ok(Self { spectra, nfft, nperseg, noverlap, scale: 1.0 / (fs * s2) })
    }

    fn one_sided_factor(&self, k: usize) -> f64 {
        if k == 0 || (self.nfft.is_multiple_of(2) && k == self.nfft / 2) {
            1.0
        } else {
            2.0
        }
    }

    fn auto(&self) -> Vec<f64> {
        let m = self.spectra.len() as f64;
        (0..=self.nfft / 2)
            .map(|k| {
                let sum: f64 = self.spectra.iter().map(|s| s[k].norm_sqr()).sum();
                sum / m * self.scale * self.one_sided_factor(k)
            })
            .collect()
    }

    fn cross(&self, other: &Segments) -> Vec<Complex64> {
        let m = self.spectra.len() as f64;
        (0..=self.nfft / 2)
            .map(|k| {
                let sum: Complex64 = self.spectra.iter().zip(&other.spectra).map(|(a, b)| a[k] * b[k].conj()).sum();
                sum / m * self.scale * self.one_sided_factor(k)
            })
            .collect()
    }

    fn estimate(&self, kind: SpectralKind, fs: f64, values: Vec<f64>) -> SpectralEstimate {
        SpectralEstimate {
            kind,
            freqs_hz: one_sided_freqs(self.nfft, fs),
            values,
            nperseg: self.nperseg,
            overlap: self.noverlap,
            n_segments: self.spectra.len(),
            padded_len: (self.nfft != self.nperseg).then_some(self.nfft),
        }
    }
}

/// Welch PSD (V²/Hz): Hann window, constant detrend, averaged periodograms.
pub fn psd_welch(x: &[f64], fs: f64, nperseg: usize, overlap_fraction: f64) -> Result<SpectralEstimate> {
    let segs = Segments::new(x, fs, nperseg, overlap_fraction)?;
    let values = segs.auto();
    Ok(segs.estimate(SpectralKind::Psd, fs, values))
}

pub const MIN_COHERENCE_SEGMENTS: usize = 8;

/// Magnitude-squared coherence `|Pxy|² / (Pxx·Pyy)` with 50% overlapping
/// Hann segments. Bins where either auto-spectrum vanishes are reported as 0.
pub fn coherence(x: &[f64], y: &[f64], fs: f64, nperseg: usize) -> Result<SpectralEstimate> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let sx = Segments::new(x, fs, nperseg, 0.5)?;
    if sx.spectra.len() < MIN_COHERENCE_SEGMENTS {
        return Err(Error::invalid(format!(
            "coherence needs at least {MIN_COHERENCE_SEGMENTS} segments, got {}",
            sx.spectra.len()
        )));
    }
    let sy = Segments::new(y, fs, nperseg, 0.5)?;
    let values = coherence_from(&sx, &sy);
    Ok(sx.estimate(SpectralKind::Coherence, fs, values))
}

fn coherence_from(sx: &Segments, sy: &Segments) -> Vec<f64> {
    let pxx = sx.auto();
    let pyy = sy.auto();
    let pxy = sx.cross(sy);
    pxy.iter()
        .zip(pxx.iter().zip(&pyy))
        .map(|(c, (a, b))| {
            let denom = a * b;
            if denom > 0.0 {
                (c.norm_sqr() / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Precomputed segment spectra of a fixed reference signal, for repeated
/// coherence evaluations against it.
pub(crate) struct CoherenceReference {
    segs: Segments,
    fs: f64,
}

impl CoherenceReference {
    pub(crate) fn new(y: &[f64], fs: f64, nperseg: usize) -> Result<Self> {
        let segs = Segments::new(y, fs, nperseg, 0.5)?;
        if segs.spectra.len() < MIN_COHERENCE_SEGMENTS {
            return Err(Error::invalid(format!(
                "coherence needs at least {MIN_COHERENCE_SEGMENTS} segments, got {}",
                segs.spectra.len()
            )));
        }
        Ok(Self { segs, fs })
    }

    pub(crate) fn against(&self, x: &[f64]) -> Result<Vec<f64>> {
        let sx = Segments::new(x, self.fs, self.segs.nperseg, 0.5)?;
        if sx.spectra.len() != self.segs.spectra.len() {
            return Err(Error::invalid("coherence reference length mismatch"));
        }
        Ok(coherence_from(&sx, &self.segs))
    }

    pub(crate) fn freqs(&self) -> Vec<f64> {
        one_sided_freqs(self.segs.nfft, self.fs)
    }
}
