//! Filtering, power envelopes and spectral analysis.

mod bootstrap;
pub mod fft;
pub mod filter;
pub mod spectral;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_cohort_stats, table2_csv, BootstrapConfig, CohortStats, CohortStatsRow};
pub use filter::{apply_filter, design_filter, Biquad, FilterKind, FilterSpec, SosFilter};
pub use spectral::{coherence, fft_magnitude, psd_welch, SpectralEstimate, SpectralKind};

use crate::dataset::Recording;
use crate::Result;

/// Order in which the envelope stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeOrder {
    /// high-pass → square → low-pass: band power tracked over time.
    #[default]
    Standard,
    /// high-pass → low-pass → square, the stages as literally listed. With a
    /// 50 Hz high-pass and a 10 Hz low-pass the passbands are disjoint and the
    /// output is close to zero; kept for comparison only.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    pub high_pass_hz: f64,
    pub low_pass_hz: f64,
    pub order: usize,
    pub ordering: EnvelopeOrder,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self { high_pass_hz: 50.0, low_pass_hz: 10.0, order: 4, ordering: EnvelopeOrder::Standard }
    }
}

/// Power envelope of `x`. Both filters are 4th-order (by default) Butterworth
/// applied zero-phase. Squaring already discards sign, so no separate
/// absolute value is taken.
pub fn power_envelope(x: &[f64], fs: f64, cfg: &EnvelopeConfig) -> Result<Vec<f64>> {
    let hp = design_filter(FilterSpec::high_pass(cfg.high_pass_hz, cfg.order, fs))?;
    let lp = design_filter(FilterSpec::low_pass(cfg.low_pass_hz, cfg.order, fs))?;
    let high = apply_filter(x, &hp, true)?;
    Ok(match cfg.ordering {
        EnvelopeOrder::Standard => {
            let squared: Vec<f64> = high.iter().map(|v| v * v).collect();
            apply_filter(&squared, &lp, true)?
        }
        EnvelopeOrder::Literal => apply_filter(&high, &lp, true)?.iter().map(|v| v * v).collect(),
    })
}

/// Power envelope of every channel of a recording.
pub fn envelope_recording(rec: &Recording, cfg: &EnvelopeConfig) -> Result<Recording> {
    let fs = rec.srate() as f64;
    rec.map_channels(|x| power_envelope(x, fs, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        crate::stats::pearson(a, b)
    }

    #[test]
    fn envelope_tracks_am_carrier() {
        let fs = 1000.0;
        let n = 6000;
        let env: Vec<f64> = (0..n).map(|i| 1.0 + 0.8 * (2.0 * PI * 2.0 * i as f64 / fs).sin()).collect();
        let x: Vec<f64> = env.iter().enumerate().map(|(i, e)| e * (2.0 * PI * 80.0 * i as f64 / fs).sin()).collect();
        let y = power_envelope(&x, fs, &EnvelopeConfig::default()).unwrap();
        assert_eq!(y.len(), n);
        let squared: Vec<f64> = env.iter().map(|e| e * e).collect();
        let r = pearson(&y, &squared);
        assert!(r >= 0.9, "r = {r}");
    }

    #[test]
    fn dc_input_vanishes() {
        let level = 3.0;
        let y = power_envelope(&vec![level; 3000], 1000.0, &EnvelopeConfig::default()).unwrap();
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-6 * level * level, "{max}");
    }

    #[test]
    fn slow_input_is_rejected() {
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 5.0 * i as f64 / 1000.0).sin()).collect();
        let y = power_envelope(&x, 1000.0, &EnvelopeConfig::default()).unwrap();
        let p_in = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let p_out = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!(p_out <= 0.01 * p_in, "{p_out} vs {p_in}");
    }

    #[test]
    fn literal_order_is_near_zero_for_gamma() {
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 90.0 * i as f64 / 1000.0).sin()).collect();
        let cfg = EnvelopeConfig { ordering: EnvelopeOrder::Literal, ..Default::default() };
        let literal = power_envelope(&x, 1000.0, &cfg).unwrap();
        let standard = power_envelope(&x, 1000.0, &EnvelopeConfig::default()).unwrap();
        let mean = |v: &[f64]| v[500..3500].iter().sum::<f64>() / 3000.0;
        assert!(mean(&literal) < 1e-6 * mean(&standard));
    }
}
