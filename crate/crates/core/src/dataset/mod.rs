//! Recording and epoch data model.
//!
//! A [`Recording`] is one participant/condition session: a time × channel
//! voltage matrix plus sorted, non-overlapping stimulus events. Epoching turns
//! it into an [`EpochSet`] of equally shaped windows with integer labels.

pub mod container;
mod epochs;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use epochs::{
    decimate, epoch_features_mean, extract_interval_epochs, extract_stimulus_epochs, fit_channels, normalize_mean,
    normalize_unit, one_hot, split_train_test, LabelScheme,
};

/// Stimulus code for tongue movement.
pub const STIM_TONGUE: u32 = 11;
/// Stimulus code for hand movement.
pub const STIM_HAND: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Real,
    Imagery,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Real, Condition::Imagery];

    /// Label used by the real-vs-imagery task.
    pub fn label(self) -> usize {
        match self {
            Condition::Real => 0,
            Condition::Imagery => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Real => "real",
            Condition::Imagery => "imagery",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimEvent {
    pub t_on: usize,
    pub t_off: usize,
    pub stim_id: u32,
}

/// One participant/condition session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    participant_id: String,
    condition: Condition,
    srate: u32,
    voltages: Array2<f32>,
    events: Vec<StimEvent>,
    padded: Vec<bool>,
}

impl Recording {
    /// Validates and builds a recording. Events are sorted by onset first;
    /// they must then be in range and non-overlapping.
    pub fn new(
        participant_id: impl Into<String>,
        condition: Condition,
        srate: u32,
        voltages: Array2<f32>,
        mut events: Vec<StimEvent>,
    ) -> Result<Self> {
        if srate == 0 {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if voltages.ncols() == 0 {
            return Err(Error::invalid("recording has no channels"));
        }
        if let Some(((t, c), _)) = voltages.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { time: t, channel: c });
        }
        events.sort_by_key(|e| (e.t_on, e.t_off));
        validate_events(&events, voltages.nrows())?;
        let padded = vec![false; voltages.ncols()];
        Ok(Self { participant_id: participant_id.into(), condition, srate, voltages, events, padded })
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn srate(&self) -> u32 {
        self.srate
    }

    /// Time × channel matrix.
    pub fn voltages(&self) -> &Array2<f32> {
        &self.voltages
    }

    pub fn events(&self) -> &[StimEvent] {
        &self.events
    }

    pub fn n_samples(&self) -> usize {
        self.voltages.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.voltages.ncols()
    }

    /// Per-channel flag: true for null channels added by padding.
    pub fn padded(&self) -> &[bool] {
        &self.padded
    }

    /// Applies `f` to every real (non-padded) channel, keeping events.
    pub fn map_channels<F>(&self, f: F) -> Result<Recording>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        use rayon::prelude::*;
        let n = self.n_samples();
        let columns: Vec<Option<Vec<f64>>> = (0..self.channel_count())
            .into_par_iter()
            .map(|c| {
                if self.padded[c] {
                    return Ok(None);
                }
                let col: Vec<f64> = self.voltages.column(c).iter().map(|&v| v as f64).collect();
                let out = f(&col)?;
                if out.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: out.len() });
                }
                Ok(Some(out))
            })
            .collect::<Result<_>>()?;
        let mut voltages = self.voltages.clone();
        for (c, col) in columns.into_iter().enumerate() {
            if let Some(col) = col {
                for (dst, v) in voltages.column_mut(c).iter_mut().zip(col) {
                    *dst = v as f32;
                }
            }
        }
        if let Some(((t, c), _)) = voltages.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { time: t, channel: c });
        }
        Ok(Recording { voltages, ..self.clone() })
    }

    fn with_channels(&self, n: usize) -> Recording {
        let have = self.channel_count();
        let mut voltages = Array2::<f32>::zeros((self.n_samples(), n));
        let keep = have.min(n);
        voltages.slice_mut(s![.., ..keep]).assign(&self.voltages.slice(s![.., ..keep]));
        let mut padded = self.padded[..keep].to_vec();
        padded.resize(n, true);
        Recording { voltages, padded, ..self.clone() }
    }
}

fn validate_events(events: &[StimEvent], n_samples: usize) -> Result<()> {
    for (i, e) in events.iter().enumerate() {
        if e.t_off <= e.t_on || e.t_off > n_samples {
            return Err(Error::EventOutOfRange { index: i, t_on: e.t_on, t_off: e.t_off, n_samples });
        }
        if i > 0 && e.t_on < events[i - 1].t_off {
            return Err(Error::EventOrder { index: i });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarmonizeMode {
    PadNull,
    Truncate,
}

/// Brings every recording to a common channel count: the maximum (zero-filled
/// null channels, flagged in [`Recording::padded`]) or the minimum.
pub fn harmonize_channels(recordings: &[Recording], mode: HarmonizeMode) -> Result<Vec<Recording>> {
    let counts = recordings.iter().map(Recording::channel_count);
    let target = match mode {
        HarmonizeMode::PadNull => counts.max(),
        HarmonizeMode::Truncate => counts.min(),
    }
    .ok_or_else(|| Error::invalid("harmonize_channels needs at least one recording"))?;
    Ok(recordings.iter().map(|r| r.with_channels(target)).collect())
}

/// Where an epoch came from in its source recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochOrigin {
    pub condition: Condition,
    pub start: usize,
    pub stim_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochMeta {
    pub participant_id: String,
    pub window: usize,
    pub srate: u32,
    /// Sample step between consecutive epoch rows relative to the source
    /// recording (1 unless decimated).
    pub step: usize,
    pub origins: Vec<EpochOrigin>,
    pub padded: Vec<bool>,
    pub dropped_events: usize,
    pub warnings: Vec<String>,
}

/// Labeled fixed-length windows, epochs × time × channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    data: Array3<f32>,
    labels: Vec<usize>,
    label_names: BTreeMap<usize, String>,
    meta: EpochMeta,
}

impl EpochSet {
    pub fn new(
        data: Array3<f32>,
        labels: Vec<usize>,
        label_names: BTreeMap<usize, String>,
        meta: EpochMeta,
    ) -> Result<Self> {
        if data.shape()[0] != labels.len() {
            return Err(Error::DimensionMismatch { expected: data.shape()[0], found: labels.len() });
        }
        if let Some(l) = labels.iter().find(|l| !label_names.contains_key(l)) {
            return Err(Error::invalid(format!("label {l} outside declared alphabet")));
        }
        if meta.origins.len() != labels.len() {
            return Err(Error::invalid("origins must have one entry per epoch"));
        }
        if meta.padded.len() != data.shape()[2] {
            return Err(Error::invalid("padded flags must have one entry per channel"));
        }
        Ok(Self { data, labels, label_names, meta })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &BTreeMap<usize, String> {
        &self.label_names
    }

    pub fn meta(&self) -> &EpochMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.keys().next_back().map_or(0, |k| k + 1)
    }

    /// Subset by epoch indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> EpochSet {
        let data = self.data.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let meta = EpochMeta { origins: indices.iter().map(|&i| self.meta.origins[i]).collect(), ..self.meta.clone() };
        EpochSet { data, labels, label_names: self.label_names.clone(), meta }
    }

    /// Stacks sets with identical window/channel shape; label alphabets merge.
    pub fn concat(sets: &[EpochSet]) -> Result<EpochSet> {
        let first = sets.first().ok_or_else(|| Error::invalid("concat needs at least one epoch set"))?;
        let views: Vec<_> = sets.iter().map(|s| s.data.view()).collect();
        for s in sets {
            if s.data.shape()[1..] != first.data.shape()[1..] {
                return Err(Error::invalid(format!(
                    "epoch shape mismatch: {:?} vs {:?}",
                    &s.data.shape()[1..],
                    &first.data.shape()[1..]
                )));
            }
        }
        let data = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        let mut label_names = BTreeMap::new();
        let mut meta = first.meta.clone();
        meta.origins.clear();
        meta.dropped_events = 0;
        meta.warnings.clear();
        let mut labels = Vec::new();
        for s in sets {
            label_names.extend(s.label_names.clone());
            labels.extend_from_slice(&s.labels);
            meta.origins.extend_from_slice(&s.meta.origins);
            meta.dropped_events += s.meta.dropped_events;
            meta.warnings.extend(s.meta.warnings.iter().cloned());
        }
        EpochSet::new(data, labels, label_names, meta)
    }

    pub(crate) fn with_data(&self, data: Array3<f32>, meta: EpochMeta) -> EpochSet {
        EpochSet { data, labels: self.labels.clone(), label_names: self.label_names.clone(), meta }
    }

    /// Audit CSV: one row per epoch with its label and source position.
    pub fn metadata_csv(&self) -> String {
        let mut out = String::from("epoch,participant,label,label_name,condition,stim_id,start,window\n");
        for (i, (label, origin)) in self.labels.iter().zip(&self.meta.origins).enumerate() {
            out.push_str(&format!(
                "{i},{},{label},{},{},{},{},{}\n",
                self.meta.participant_id,
                self.label_names[label],
                origin.condition,
                origin.stim_id.map(|s| s.to_string()).unwrap_or_default(),
                origin.start,
                self.meta.window,
            ));
        }
        out
    }
}

/// Train/test partition of one epoch set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: EpochSet,
    pub test: EpochSet,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}
