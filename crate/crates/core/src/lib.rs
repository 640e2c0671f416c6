//! # ecog-core
//!
//! Data model and analysis primitives for ECoG motor execution / motor
//! imagery recordings:
//!
//! ```text
//! ECOG-BIN v1 directory
//!   │
//!   ├─ dataset::container   load / write recordings
//!   ├─ dataset              channel harmonization, epoching, normalization, splits
//!   ├─ dsp                  Butterworth SOS filters, power envelope, FFT, Welch PSD,
//!   │                       coherence, bootstrapped coherence statistics
//!   ├─ umap                 exact kNN graph → fuzzy simplicial set → SGD layout
//!   ├─ knn                  KNN scoring over embeddings, per-participant tables,
//!   │                       screening correlation
//!   └─ synth                seeded synthetic cohorts with a separability knob
//! ```
//!
//! Every stochastic operation takes an explicit seed and derives its random
//! streams through [`rng::stream`], so results are reproducible across runs
//! and thread counts.

// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the textbook form of the rotation and DFT formulas.
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod knn;
pub mod plot;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod umap;

pub use error::{Error, Result};
