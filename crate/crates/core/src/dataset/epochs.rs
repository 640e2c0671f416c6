use std::collections::BTreeMap;

use log::warn;
use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;

use super::{EpochMeta, EpochOrigin, EpochSet, Recording, SplitPair, STIM_HAND, STIM_TONGUE};
use crate::{rng, Error, Result};

/// How stimulus-locked epochs are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    /// Real → 0, Imagery → 1.
    Condition,
    /// Tongue (11) → 0, hand (12) → 1.
    Stimulus,
}

fn stim_label(stim_id: u32) -> Option<usize> {
    match stim_id {
        STIM_TONGUE => Some(0),
        STIM_HAND => Some(1),
        _ => None,
    }
}

fn slice_epochs(rec: &Recording, starts: &[usize], window: usize) -> Array3<f32> {
    let mut data = Array3::<f32>::zeros((starts.len(), window, rec.channel_count()));
    for (i, &start) in starts.iter().enumerate() {
        data.slice_mut(s![i, .., ..]).assign(&rec.voltages().slice(s![start..start + window, ..]));
    }
    data
}

/// One window of `window` samples starting at each stimulus onset. Events
/// whose window would run past the end of the recording are dropped and
/// counted in `meta.dropped_events`.
pub fn extract_stimulus_epochs(rec: &Recording, window: usize, scheme: LabelScheme) -> Result<EpochSet> {
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let mut starts = Vec::new();
    let mut labels = Vec::new();
    let mut origins = Vec::new();
    let mut dropped = 0;
    for e in rec.events() {
        let label = match scheme {
            LabelScheme::Condition => Some(rec.condition().label()),
            LabelScheme::Stimulus => stim_label(e.stim_id),
        };
        match label {
            Some(label) if e.t_on + window <= rec.n_samples() => {
                starts.push(e.t_on);
                labels.push(label);
                origins.push(EpochOrigin { condition: rec.condition(), start: e.t_on, stim_id: Some(e.stim_id) });
            }
            _ => dropped += 1,
        }
    }
    let mut warnings = Vec::new();
    if dropped > 0 {
        let msg = format!(
            "{}/{}: dropped {dropped} events (window {window} exceeds recording or unknown stimulus)",
            rec.participant_id(),
            rec.condition()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    if starts.is_empty() {
        return Err(Error::NoEpochs { window, dropped });
    }
    let label_names: BTreeMap<usize, String> = match scheme {
        LabelScheme::Condition => [(0, "real"), (1, "imagery")],
        LabelScheme::Stimulus => [(0, "tongue"), (1, "hand")],
    }
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect();
    let meta = EpochMeta {
        participant_id: rec.participant_id().to_string(),
        window,
        srate: rec.srate(),
        step: 1,
        origins,
        padded: rec.padded().to_vec(),
        dropped_events: dropped,
        warnings,
    };
    EpochSet::new(slice_epochs(rec, &starts, window), labels, label_names, meta)
}

/// Activity windows (tongue → 0, hand → 1) starting at each onset, plus rest
/// windows (→ 2) starting at each offset that is followed by another event.
/// Intervals shorter than `window` are dropped.
pub fn extract_interval_epochs(rec: &Recording, window: usize) -> Result<EpochSet> {
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let events = rec.events();
    let mut picks: Vec<(usize, usize, Option<u32>)> = Vec::new();
    let mut dropped = 0;
    for (i, e) in events.iter().enumerate() {
        match stim_label(e.stim_id) {
            Some(label) if e.t_off - e.t_on >= window => picks.push((e.t_on, label, Some(e.stim_id))),
            _ => dropped += 1,
        }
        if let Some(next) = events.get(i + 1) {
            if next.t_on - e.t_off >= window {
                picks.push((e.t_off, 2, None));
            } else {
                dropped += 1;
            }
        }
    }
    picks.sort_by_key(|p| p.0);
    if picks.is_empty() {
        return Err(Error::NoEpochs { window, dropped });
    }
    let starts: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let labels = picks.iter().map(|p| p.1).collect();
    let origins =
        picks.iter().map(|&(start, _, stim_id)| EpochOrigin { condition: rec.condition(), start, stim_id }).collect();
    let label_names = [(0, "tongue"), (1, "hand"), (2, "rest")].into_iter().map(|(k, v)| (k, v.to_string())).collect();
    let meta = EpochMeta {
        participant_id: rec.participant_id().to_string(),
        window,
        srate: rec.srate(),
        step: 1,
        origins,
        padded: rec.padded().to_vec(),
        dropped_events: dropped,
        warnings: Vec::new(),
    };
    EpochSet::new(slice_epochs(rec, &starts, window), labels, label_names, meta)
}

/// Global min-max scaling to [0, 1] over all epochs jointly. Null (padded)
/// channels are excluded from the statistics and left at zero.
pub fn normalize_unit(epochs: &EpochSet) -> EpochSet {
    let padded = &epochs.meta().padded;
    let live = |c: usize| !padded[c];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((_, _, c), &v) in epochs.data().indexed_iter() {
        if live(c) {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
    }
    let mut meta = epochs.meta().clone();
    let mut data = epochs.data().clone();
    if !(hi > lo) {
        let msg = format!("{}: constant data, min-max normalization yields zeros", meta.participant_id);
        warn!("{msg}");
        meta.warnings.push(msg);
        data.fill(0.0);
        return epochs.with_data(data, meta);
    }
    let span = hi - lo;
    for ((_, _, c), v) in data.indexed_iter_mut() {
        if live(c) {
            *v = ((*v as f64 - lo) / span) as f32;
        }
    }
    epochs.with_data(data, meta)
}

/// Divides each channel by its mean absolute value over every epoch and time
/// step. All-zero channels are left unchanged.
pub fn normalize_mean(epochs: &EpochSet) -> EpochSet {
    let n_ch = epochs.n_channels();
    let count = (epochs.len() * epochs.n_times()) as f64;
    let mut sums = vec![0.0f64; n_ch];
    for ((_, _, c), &v) in epochs.data().indexed_iter() {
        sums[c] += (v as f64).abs();
    }
    let mut meta = epochs.meta().clone();
    let mut scale = vec![1.0f64; n_ch];
    for c in 0..n_ch {
        let mean_abs = sums[c] / count;
        if mean_abs > 0.0 {
            scale[c] = 1.0 / mean_abs;
        } else if !meta.padded[c] {
            let msg = format!("{}: channel {c} is all zero, left unnormalized", meta.participant_id);
            warn!("{msg}");
            meta.warnings.push(msg);
        }
    }
    let mut data = epochs.data().clone();
    for ((_, _, c), v) in data.indexed_iter_mut() {
        *v = (*v as f64 * scale[c]) as f32;
    }
    epochs.with_data(data, meta)
}

/// Time-mean of every epoch and channel: epochs × channels.
pub fn epoch_features_mean(epochs: &EpochSet) -> Array2<f64> {
    let (n, t, c) = epochs.data().dim();
    let mut out = Array2::<f64>::zeros((n, c));
    for ((i, _, ch), &v) in epochs.data().indexed_iter() {
        out[[i, ch]] += v as f64;
    }
    out.mapv_inplace(|s| s / t as f64);
    out
}

/// Keeps every `factor`-th time step. No anti-alias filter is applied, so the
/// input should already be band-limited (e.g. a power envelope).
pub fn decimate(epochs: &EpochSet, factor: usize) -> Result<EpochSet> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be positive"));
    }
    if factor == 1 {
        return Ok(epochs.clone());
    }
    let data = epochs.data().slice(s![.., ..;factor, ..]).to_owned();
    let mut meta = epochs.meta().clone();
    meta.step *= factor;
    Ok(epochs.with_data(data, meta))
}

/// Truncates to the first `n` channels, or pads with flagged null channels.
pub fn fit_channels(epochs: &EpochSet, n: usize) -> Result<EpochSet> {
    if n == 0 {
        return Err(Error::invalid("channel count must be positive"));
    }
    let (e, t, c) = epochs.data().dim();
    let keep = c.min(n);
    let mut data = Array3::<f32>::zeros((e, t, n));
    data.slice_mut(s![.., .., ..keep]).assign(&epochs.data().slice(s![.., .., ..keep]));
    let mut meta = epochs.meta().clone();
    meta.padded.truncate(keep);
    meta.padded.resize(n, true);
    Ok(epochs.with_data(data, meta))
}

/// Seeded random partition; `round(ratio·n)` epochs go to train.
pub fn split_train_test(epochs: &EpochSet, ratio: f64, seed: u64) -> Result<SplitPair> {
    let n = epochs.len();
    if n < 4 {
        return Err(Error::invalid(format!("split needs at least 4 epochs, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[0x5B11]));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitPair {
        train: epochs.select(&train_indices),
        test: epochs.select(&test_indices),
        train_indices,
        test_indices,
        seed,
        ratio,
    })
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Array2<f32>> {
    let mut out = Array2::<f32>::zeros((labels.len(), n_classes));
    for (mut row, &l) in out.axis_iter_mut(Axis(0)).zip(labels) {
        if l >= n_classes {
            return Err(Error::invalid(format!("label {l} >= n_classes {n_classes}")));
        }
        row[l] = 1.0;
    }
    Ok(out)
}
