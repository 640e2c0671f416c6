#![allow(dead_code)]

pub mod gradcheck;

use std::collections::BTreeMap;

use ecog_core::dataset::{
    decimate, extract_interval_epochs, normalize_unit, split_train_test, Condition, EpochMeta, EpochOrigin, EpochSet,
    SplitPair,
};
use ecog_core::dsp::{envelope_recording, EnvelopeConfig};
use ecog_core::rng;
use ecog_core::synth::{generate_cohort, SynthConfig};
use ndarray::Array3;
use rand::Rng;

pub fn epoch_set(data: Array3<f32>, labels: Vec<usize>, n_classes: usize) -> EpochSet {
    let (n, t, c) = data.dim();
    let names: BTreeMap<usize, String> = (0..n_classes).map(|k| (k, format!("c{k}"))).collect();
    let meta = EpochMeta {
        participant_id: "t".into(),
        window: t,
        srate: 1000,
        step: 1,
        origins: (0..n).map(|i| EpochOrigin { condition: Condition::Real, start: i, stim_id: None }).collect(),
        padded: vec![false; c],
        ..Default::default()
    };
    EpochSet::new(data, labels, names, meta).unwrap()
}

/// Uniform noise with arbitrary labels.
pub fn noise_set(n: usize, t: usize, c: usize, n_classes: usize, seed: u64) -> EpochSet {
    let mut r = rng::stream(seed, &[]);
    let data = Array3::from_shape_fn((n, t, c), |_| r.random_range(-1.0f32..1.0));
    let labels = (0..n).map(|i| i % n_classes).collect();
    epoch_set(data, labels, n_classes)
}

/// Tongue / hand / rest epochs of one fully separable synthetic participant,
/// as envelopes decimated to 150 steps.
pub fn synth_three_class(seed: u64) -> SplitPair {
    let cfg = SynthConfig { deltas: vec![1.0], events_per_condition: 60, seed, ..Default::default() };
    let cohort = generate_cohort(&cfg).unwrap();
    let env = envelope_recording(&cohort[0].real, &EnvelopeConfig::default()).unwrap();
    let epochs = extract_interval_epochs(&env, 3000).unwrap();
    let epochs = normalize_unit(&decimate(&epochs, 20).unwrap());
    split_train_test(&epochs, 0.75, seed).unwrap()
}
