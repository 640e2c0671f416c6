//! # ecog-cli
//!
//! Config-driven runner for the ECoG toolkit. Every verb reads one
//! [`config::ExperimentConfig`], writes CSV / JSON / SVG artifacts under the
//! output directory and finishes with `report-<verb>.json`:
//!
//! ```text
//! synth     cohort containers + cohort_truth.json
//! eda       psd/*, coherence/*, table2.csv
//! umap-knn  table1.csv, embeddings/*
//! train     models/*.ecnn, histories/*.csv, leaderboards/*.json, dl_results.json
//! finetune  models/*-finetuned.ecnn, histories/*-finetuned.csv, finetune.json
//! screen    table1.csv, dl_results.json, screening.json, screening.svg
//! ```
//!
//! Reruns with the same config and inputs reproduce every artifact byte for
//! byte; wall-clock time is kept in `timing-<verb>.json`.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
