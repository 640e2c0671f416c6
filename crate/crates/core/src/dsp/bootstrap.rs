//! Bootstrapped coherence statistics per participant.
//!
//! For each condition: take the condition-mean signal over all epochs as the
//! reference; resample epochs with replacement, average the resample, and
//! measure its coherence with the reference on every live channel. The
//! per-replicate statistic is that coherence averaged over channels and over
//! every non-DC frequency bin. Mean, standard deviation and range of the
//! replicate distribution are reported per condition.

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectral::CoherenceReference;
use crate::dataset::EpochSet;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub seed: u64,
    /// Segment length; `None` picks 256 or the largest power of two that still
    /// yields 8 half-overlapping segments.
    pub nperseg: Option<usize>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_boot: 1000, seed: 0, nperseg: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStatsRow {
    pub participant_id: String,
    pub mean_real: f64,
    pub mean_imag: f64,
    pub abs_mean_diff: f64,
    pub std_real: f64,
    pub std_imag: f64,
    pub range_real: f64,
    pub range_imag: f64,
}

/// Table row plus the replicate-averaged per-frequency curves it summarizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub row: CohortStatsRow,
    pub freqs_hz: Vec<f64>,
    pub curve_real: Vec<f64>,
    pub curve_imag: Vec<f64>,
    pub replicates_real: Vec<f64>,
    pub replicates_imag: Vec<f64>,
}

fn auto_nperseg(n_times: usize) -> usize {
    // 8 segments at 50% overlap need n ≥ 4.5 · nperseg.
    let cap = (2 * n_times / 9).max(2);
    let mut p = 1usize << (usize::BITS - 1 - cap.leading_zeros());
    p = p.min(256);
    p.max(2)
}

fn mean_signal(epochs: &EpochSet, indices: impl Iterator<Item = usize>) -> Array2<f64> {
    let (_, t, c) = epochs.data().dim();
    let mut acc = Array2::<f64>::zeros((t, c));
    let mut count = 0usize;
    for i in indices {
        let epoch = epochs.data().index_axis(Axis(0), i);
        acc.zip_mut_with(&epoch, |a, &v| *a += v as f64);
        count += 1;
    }
    acc.mapv_inplace(|v| v / count as f64);
    acc
}

struct ConditionStats {
    replicates: Vec<f64>,
    curve: Vec<f64>,
    freqs: Vec<f64>,
}

fn condition_stats(epochs: &EpochSet, cfg: &BootstrapConfig, nperseg: usize, stream_id: u64) -> Result<ConditionStats> {
    let n = epochs.len();
    let live: Vec<usize> = (0..epochs.n_channels()).filter(|&c| !epochs.meta().padded[c]).collect();
    if live.is_empty() {
        return Err(Error::invalid("no live channels for coherence bootstrap"));
    }
    let fs = epochs.meta().srate as f64 / epochs.meta().step as f64;
    let overall = mean_signal(epochs, 0..n);
    let references: Vec<CoherenceReference> = live
        .iter()
        .map(|&c| CoherenceReference::new(&overall.column(c).to_vec(), fs, nperseg))
        .collect::<Result<_>>()?;
    let freqs = references[0].freqs();
    let n_bins = freqs.len();

    let curves: Vec<Vec<f64>> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(cfg.seed, &[0xB007, stream_id, b as u64]);
            let picks: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let resampled = mean_signal(epochs, picks.into_iter());
            let mut curve = vec![0.0; n_bins];
            for (reference, &c) in references.iter().zip(&live) {
                let coh = reference.against(&resampled.column(c).to_vec())?;
                for (acc, v) in curve.iter_mut().zip(coh) {
                    *acc += v / live.len() as f64;
                }
            }
            Ok(curve)
        })
        .collect::<Result<_>>()?;

    let replicates = curves.iter().map(|c| c[1..].iter().sum::<f64>() / (n_bins - 1) as f64).collect();
    let mut curve = vec![0.0; n_bins];
    for c in &curves {
        for (acc, v) in curve.iter_mut().zip(c) {
            *acc += v / cfg.n_boot as f64;
        }
    }
    Ok(ConditionStats { replicates, curve, freqs })
}

fn summarize(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), hi - lo)
}

pub fn bootstrap_cohort_stats(real: &EpochSet, imag: &EpochSet, cfg: &BootstrapConfig) -> Result<CohortStats> {
    if real.is_empty() || imag.is_empty() {
        return Err(Error::invalid("bootstrap needs non-empty real and imagery sets"));
    }
    if real.n_channels() != imag.n_channels() {
        return Err(Error::DimensionMismatch { expected: real.n_channels(), found: imag.n_channels() });
    }
    if real.n_times() != imag.n_times() {
        return Err(Error::DimensionMismatch { expected: real.n_times(), found: imag.n_times() });
    }
    if cfg.n_boot == 0 {
        return Err(Error::invalid("n_boot must be positive"));
    }
    let nperseg = cfg.nperseg.unwrap_or_else(|| auto_nperseg(real.n_times()));
    let r = condition_stats(real, cfg, nperseg, 0)?;
    let i = condition_stats(imag, cfg, nperseg, 1)?;
    let (mean_real, std_real, range_real) = summarize(&r.replicates);
    let (mean_imag, std_imag, range_imag) = summarize(&i.replicates);
    Ok(CohortStats {
        row: CohortStatsRow {
            participant_id: real.meta().participant_id.clone(),
            mean_real,
            mean_imag,
            abs_mean_diff: (mean_real - mean_imag).abs(),
            std_real,
            std_imag,
            range_real,
            range_imag,
        },
        freqs_hz: r.freqs,
        curve_real: r.curve,
        curve_imag: i.curve,
        replicates_real: r.replicates,
        replicates_imag: i.replicates,
    })
}

/// CSV in the column order of the coherence statistics table.
pub fn table2_csv(rows: &[CohortStatsRow]) -> String {
    let mut out =
        String::from("Participant,Mean_Real,Mean_Imag,Abs_Mean_Diff,Std_Real,Std_Imag,Range_Real,Range_Imag\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.participant_id,
            r.mean_real,
            r.mean_imag,
            r.abs_mean_diff,
            r.std_real,
            r.std_imag,
            r.range_real,
            r.range_imag
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Condition, EpochMeta, EpochOrigin};
    use ndarray::Array3;
    use rand_distr::StandardNormal;

    fn noise_set(seed: u64, n: usize, t: usize, c: usize) -> EpochSet {
        let mut r = rng::stream(seed, &[]);
        let data = Array3::from_shape_fn((n, t, c), |_| r.sample::<f64, _>(StandardNormal) as f32);
        let meta = EpochMeta {
            participant_id: "p".into(),
            window: t,
            srate: 1000,
            step: 1,
            origins: vec![EpochOrigin { condition: Condition::Real, start: 0, stim_id: None }; n],
            padded: vec![false; c],
            ..Default::default()
        };
        EpochSet::new(data, vec![0; n], [(0, "x".to_string())].into(), meta).unwrap()
    }

    #[test]
    fn identical_sets_have_tiny_difference() {
        let set = noise_set(1, 30, 1200, 2);
        let cfg = BootstrapConfig { n_boot: 200, seed: 3, nperseg: None };
        let stats = bootstrap_cohort_stats(&set, &set, &cfg).unwrap();
        let row = &stats.row;
        assert!(row.abs_mean_diff <= 0.01, "{row:?}");
        assert_eq!(row.abs_mean_diff, (row.mean_real - row.mean_imag).abs());
        assert!(row.std_real >= 0.0 && row.range_imag >= 0.0);
        assert!(stats.curve_real.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = noise_set(1, 12, 600, 1);
        let b = noise_set(2, 12, 600, 1);
        let cfg = BootstrapConfig { n_boot: 50, seed: 9, nperseg: None };
        assert_eq!(bootstrap_cohort_stats(&a, &b, &cfg).unwrap(), bootstrap_cohort_stats(&a, &b, &cfg).unwrap());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let cfg = BootstrapConfig { n_boot: 5, ..Default::default() };
        assert!(bootstrap_cohort_stats(&noise_set(1, 5, 600, 2), &noise_set(1, 5, 600, 3), &cfg).is_err());
    }

    #[test]
    fn auto_segment_length() {
        assert_eq!(auto_nperseg(2000), 256);
        assert_eq!(auto_nperseg(600), 128);
        assert_eq!(auto_nperseg(100), 16);
    }
}
