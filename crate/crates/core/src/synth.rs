//! Seeded synthetic cohorts with a per-participant separability knob.
//!
//! Each participant gets a Real and an Imagery recording. Both share the same
//! construction: 1/f^β Gaussian background on every channel, plus band-limited
//! gamma bursts during stimulus events. Tongue events burst on channels
//! `[0, s)` and hand events on `[s, 2s)` with `s = max(1, channels / 4)`;
//! the remaining channels carry background only.
//!
//! With separability `δ`, Real bursts have amplitude `A·(1 + δ)/2` and
//! Imagery bursts `A·(1 − δ)/2`. The two amplitudes always sum to `A`; at
//! `δ = 0` the conditions are identically distributed, and the gap grows
//! monotonically with `δ`. Every event also draws a log-normal gain shared by
//! its channels, so a single epoch is an imperfect witness of its condition.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::container::write_recording;
use crate::dataset::{Condition, Recording, StimEvent, STIM_HAND, STIM_TONGUE};
use crate::dsp::fft::{fft_in_place, ifft_in_place};
use crate::{rng, Error, Result};

const STREAM_SYNTH: u64 = 0x5111;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// One separability value in `[0, 1]` per participant.
    pub deltas: Vec<f64>,
    pub channels: usize,
    pub srate: u32,
    pub events_per_condition: usize,
    /// Event length in samples.
    pub event_len: usize,
    /// Minimum gap between events in samples; a random extra of up to
    /// `event_len / 3` is added.
    pub min_gap: usize,
    /// Spectral exponent β of the background, PSD ∝ f^−β.
    pub noise_exponent: f64,
    pub noise_rms: f64,
    pub gamma_band_hz: (f64, f64),
    /// Burst RMS `A` before the condition factor.
    pub burst_amplitude: f64,
    /// Standard deviation of the per-event log gain.
    pub gain_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            channels: 8,
            srate: 1000,
            events_per_condition: 40,
            event_len: 3000,
            min_gap: 3000,
            noise_exponent: 1.0,
            noise_rms: 1.0,
            gamma_band_hz: (70.0, 110.0),
            burst_amplitude: 2.0,
            gain_jitter: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_participants(&self) -> usize {
        self.deltas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::invalid("synthetic cohort needs at least one participant"));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::invalid(format!("separability {d} outside [0, 1]")));
        }
        if self.channels < 4 {
            return Err(Error::invalid(format!("need ≥ 4 channels, got {}", self.channels)));
        }
        if self.events_per_condition < 20 {
            return Err(Error::invalid(format!("need ≥ 20 events per condition, got {}", self.events_per_condition)));
        }
        if self.srate == 0 || self.event_len == 0 || self.min_gap < 3000 {
            return Err(Error::invalid("srate and event length must be positive and gaps ≥ 3000 samples"));
        }
        let nyquist = self.srate as f64 / 2.0;
        let (lo, hi) = self.gamma_band_hz;
        if !(lo > 0.0 && lo < hi && hi < nyquist) {
            return Err(Error::invalid(format!("gamma band ({lo}, {hi}) must lie inside (0, {nyquist}) Hz")));
        }
        if !(self.noise_rms >= 0.0 && self.burst_amplitude >= 0.0 && self.gain_jitter >= 0.0) {
            return Err(Error::invalid("amplitudes must be non-negative"));
        }
        Ok(())
    }

    /// Channels `[0, s)` burst for tongue events and `[s, 2s)` for hand events.
    pub fn burst_width(&self) -> usize {
        (self.channels / 4).max(1)
    }
}

/// Amplitude factor of the condition's bursts for separability `delta`.
pub fn condition_factor(condition: Condition, delta: f64) -> f64 {
    match condition {
        Condition::Real => 0.5 * (1.0 + delta),
        Condition::Imagery => 0.5 * (1.0 - delta),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParticipant {
    pub participant_id: String,
    pub delta: f64,
    pub real: Recording,
    pub imagery: Recording,
}

pub fn participant_id(index: usize) -> String {
    format!("p{index}")
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Gaussian noise with PSD ∝ f^−β, shaped in the frequency domain; DC removed
/// and scaled to unit RMS.
pub fn colored_noise(n: usize, beta: f64, rng: &mut impl Rng) -> Vec<f64> {
    let m = next_pow2(n.max(2));
    let mut buf: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    fft_in_place(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(m - k) as f64;
        *v = if f == 0.0 { Complex64::new(0.0, 0.0) } else { *v * f.powf(-beta / 2.0) };
    }
    ifft_in_place(&mut buf);
    let out: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    scale_to_unit_rms(out)
}

/// Gaussian noise confined to `[lo, hi]` Hz, unit RMS.
pub fn band_noise(n: usize, fs: f64, band: (f64, f64), rng: &mut impl Rng) -> Vec<f64> {
    let m = next_pow2(n.max(2));
    let mut buf: Vec<Complex64> = (0..m).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    fft_in_place(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(m - k) as f64 * fs / m as f64;
        if f < band.0 || f > band.1 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft_in_place(&mut buf);
    scale_to_unit_rms(buf[..n].iter().map(|c| c.re).collect())
}

fn scale_to_unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Raised-cosine ramps of `ramp` samples at both ends.
fn taper(n: usize, ramp: usize) -> Vec<f64> {
    let ramp = ramp.min(n / 2).max(1);
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            if edge >= ramp {
                1.0
            } else {
                0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
            }
        })
        .collect()
}

/// Balanced tongue/hand events in shuffled order, each followed by a gap of at
/// least `min_gap`. Returns the events and the recording length.
fn schedule(cfg: &SynthConfig, r: &mut impl Rng) -> (Vec<StimEvent>, usize) {
    let mut ids: Vec<u32> =
        (0..cfg.events_per_condition).map(|i| if i % 2 == 0 { STIM_TONGUE } else { STIM_HAND }).collect();
    ids.shuffle(r);
    let mut t = cfg.min_gap;
    let events = ids
        .into_iter()
        .map(|stim_id| {
            let ev = StimEvent { t_on: t, t_off: t + cfg.event_len, stim_id };
            t = ev.t_off + cfg.min_gap + r.random_range(0..=cfg.event_len / 3);
            ev
        })
        .collect();
    (events, t)
}

fn generate_recording(cfg: &SynthConfig, index: usize, condition: Condition) -> Result<Recording> {
    let delta = cfg.deltas[index];
    let cond_id = condition.label() as u64;
    let p = index as u64;
    let mut sched_rng = rng::stream(cfg.seed, &[STREAM_SYNTH, p, cond_id, 0]);
    let (events, n_samples) = schedule(cfg, &mut sched_rng);
    let fs = cfg.srate as f64;
    let s = cfg.burst_width();
    let factor = cfg.burst_amplitude * condition_factor(condition, delta);
    let mut gain_rng = rng::stream(cfg.seed, &[STREAM_SYNTH, p, cond_id, 1]);
    let gains: Vec<f64> =
        events.iter().map(|_| (cfg.gain_jitter * gain_rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    let window = taper(cfg.event_len, (fs * 0.05) as usize);

    let columns: Vec<Vec<f64>> = (0..cfg.channels)
        .into_par_iter()
        .map(|ch| {
            let mut r = rng::stream(cfg.seed, &[STREAM_SYNTH, p, cond_id, 2, ch as u64]);
            let mut x = colored_noise(n_samples, cfg.noise_exponent, &mut r);
            x.iter_mut().for_each(|v| *v *= cfg.noise_rms);
            for (ev, &gain) in events.iter().zip(&gains) {
                let lo = if ev.stim_id == STIM_TONGUE { 0 } else { s };
                if ch < lo || ch >= lo + s || factor == 0.0 {
                    continue;
                }
                let burst = band_noise(cfg.event_len, fs, cfg.gamma_band_hz, &mut r);
                for (i, (b, w)) in burst.iter().zip(&window).enumerate() {
                    x[ev.t_on + i] += factor * gain * w * b;
                }
            }
            x
        })
        .collect();
    let voltages = Array2::from_shape_fn((n_samples, cfg.channels), |(t, c)| columns[c][t] as f32);
    Recording::new(participant_id(index), condition, cfg.srate, voltages, events)
}

/// Real and Imagery recordings for every configured participant.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Vec<SynthParticipant>> {
    cfg.validate()?;
    (0..cfg.n_participants())
        .into_par_iter()
        .map(|i| {
            Ok(SynthParticipant {
                participant_id: participant_id(i),
                delta: cfg.deltas[i],
                real: generate_recording(cfg, i, Condition::Real)?,
                imagery: generate_recording(cfg, i, Condition::Imagery)?,
            })
        })
        .collect()
}

/// Ground truth kept apart from the model-visible recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub config: SynthConfig,
    pub participants: Vec<TruthEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub participant_id: String,
    pub delta: f64,
    pub real_dir: String,
    pub imagery_dir: String,
}

pub const TRUTH_FILE: &str = "cohort_truth.json";

/// Writes `<dir>/<participant>/{real,imagery}` containers and the truth file.
pub fn write_cohort(cfg: &SynthConfig, cohort: &[SynthParticipant], dir: impl AsRef<Path>) -> Result<CohortTruth> {
    let dir = dir.as_ref();
    let mut participants = Vec::with_capacity(cohort.len());
    for p in cohort {
        let real_dir = format!("{}/real", p.participant_id);
        let imagery_dir = format!("{}/imagery", p.participant_id);
        write_recording(&p.real, dir.join(&real_dir))?;
        write_recording(&p.imagery, dir.join(&imagery_dir))?;
        participants.push(TruthEntry {
            participant_id: p.participant_id.clone(),
            delta: p.delta,
            real_dir,
            imagery_dir,
        });
    }
    let truth = CohortTruth { config: cfg.clone(), participants };
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::invalid(e.to_string()))?;
    let path = dir.join(TRUTH_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}
