//! Declarative experiment configuration.
//!
//! One JSON document fixes every parameter of a run. Missing keys take the
//! defaults below; unknown keys are rejected so typos cannot silently fall
//! back to a default. Dotted `key=value` overrides edit the document before
//! it is parsed, so flags and file share one schema.

use std::path::{Path, PathBuf};

use ecog_core::dsp::EnvelopeConfig;
use ecog_core::knn::KnnEvalConfig;
use ecog_core::synth::SynthConfig;
use ecog_nn::{Family, SearchSpace, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

/// Which signal variants the KNN table covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Processed,
    Unprocessed,
    #[default]
    Both,
}

impl Variant {
    pub fn processed(self) -> bool {
        self != Variant::Unprocessed
    }

    pub fn unprocessed(self) -> bool {
        self != Variant::Processed
    }
}

/// Supervised task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Tongue / hand / rest on the real-movement session.
    #[default]
    ThreeClass,
    /// Real versus imagery, stimulus-locked.
    TwoClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::ThreeClass => 3,
            Task::TwoClass => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ThreeClass => "three-class",
            Task::TwoClass => "two-class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochingConfig {
    /// Samples after each stimulus onset (real-vs-imagery epochs).
    pub stimulus_window: usize,
    /// Samples per tongue / hand / rest epoch.
    pub interval_window: usize,
    /// Keep every n-th sample of envelope epochs.
    pub decimate: usize,
    pub split_ratio: f64,
    pub channel_cap_umap: usize,
    pub channel_cap_dl: usize,
}

impl Default for EpochingConfig {
    fn default() -> Self {
        Self {
            stimulus_window: 2000,
            interval_window: 3000,
            decimate: 10,
            split_ratio: 0.75,
            channel_cap_umap: 46,
            channel_cap_dl: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaConfig {
    pub n_boot: usize,
    /// Coherence segment length for the bootstrap; `null` picks automatically.
    pub coherence_nperseg: Option<usize>,
    pub welch_nperseg: usize,
}

impl Default for EdaConfig {
    fn default() -> Self {
        Self { n_boot: 1000, coherence_nperseg: None, welch_nperseg: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlConfig {
    pub task: Task,
    pub family: Family,
    pub search: SearchSpace,
    /// Budget shared by all trials; learning rate and seed are per trial.
    pub train: TrainConfig,
}

impl Default for DlConfig {
    fn default() -> Self {
        Self {
            task: Task::ThreeClass,
            family: Family::Cnn,
            search: SearchSpace::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub source_model: Option<PathBuf>,
    /// The seed field is ignored; each target derives its own from the run seed.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub threshold: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { threshold: ecog_core::knn::DEFAULT_SCREEN_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory of `<participant>/{real,imagery}` containers.
    pub dataset_root: Option<PathBuf>,
    /// Participant directory names; empty selects all, in natural order.
    pub participants: Vec<String>,
    pub variant: Variant,
    pub epoching: EpochingConfig,
    pub envelope: EnvelopeConfig,
    pub knn: KnnEvalConfig,
    pub eda: EdaConfig,
    pub dl: DlConfig,
    pub finetune: FinetuneConfig,
    pub screen: ScreenConfig,
    /// Cohort written by `synth`; its `seed` is replaced by the run seed.
    pub synth: SynthConfig,
    /// Root of every random stream in the run.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            participants: Vec::new(),
            variant: Variant::Both,
            epoching: EpochingConfig::default(),
            envelope: EnvelopeConfig::default(),
            knn: KnnEvalConfig::default(),
            eda: EdaConfig::default(),
            dl: DlConfig::default(),
            finetune: FinetuneConfig::default(),
            screen: ScreenConfig::default(),
            synth: SynthConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    /// Parses a JSON document after applying `key.path=value` overrides.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| bad(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        serde_json::from_value(doc).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::from_json(&text, overrides)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.epoching;
        if e.stimulus_window == 0 || e.interval_window == 0 || e.decimate == 0 {
            return Err(bad("epoch windows and decimation factor must be positive"));
        }
        if !(e.split_ratio > 0.0 && e.split_ratio < 1.0) {
            return Err(bad(format!("split_ratio {} outside (0, 1)", e.split_ratio)));
        }
        if e.channel_cap_umap == 0 || e.channel_cap_dl == 0 {
            return Err(bad("channel caps must be positive"));
        }
        if self.eda.n_boot == 0 || self.eda.welch_nperseg < 2 {
            return Err(bad("eda needs n_boot ≥ 1 and welch_nperseg ≥ 2"));
        }
        if self.knn.k == 0 || self.knn.umap.n_neighbors < 2 {
            return Err(bad("knn.k must be ≥ 1 and umap.n_neighbors ≥ 2"));
        }
        if !(0.0..=1.0).contains(&self.screen.threshold) {
            return Err(bad(format!("screen threshold {} outside [0, 1]", self.screen.threshold)));
        }
        self.dl.search.validate().map_err(|e| bad(e.to_string()))?;
        self.dl.train.validate().map_err(|e| bad(e.to_string()))?;
        self.finetune.train.validate().map_err(|e| bad(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(p) = self.participants.iter().find(|p| !seen.insert(p.as_str())) {
            return Err(bad(format!("participant {p} selected twice")));
        }
        Ok(())
    }

    /// The dataset root, which must be set and exist.
    pub fn require_root(&self) -> Result<&Path> {
        let root = self.dataset_root.as_deref().ok_or_else(|| bad("dataset_root is not set"))?;
        if !root.is_dir() {
            return Err(bad(format!("dataset_root {} does not exist", root.display())));
        }
        Ok(root)
    }
}

/// `a.b.c=v` sets a nested key; `v` is parsed as JSON, falling back to a
/// plain string.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad(format!("override {spec:?} is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad(format!("override key {key:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(bad(format!("override {key:?}: {} is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}
