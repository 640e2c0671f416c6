//! Participant loading and the epoch views each command consumes.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ecog_core::dataset::container::{load_recording, MANIFEST_FILE, VOLTAGE_FILE};
use ecog_core::dataset::{
    decimate, extract_interval_epochs, extract_stimulus_epochs, fit_channels, normalize_unit, split_train_test,
    EpochSet, LabelScheme, Recording, SplitPair,
};
use ecog_core::dsp::envelope_recording;
use ecog_core::knn::ParticipantData;
use ecog_core::rng;
use log::info;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, Result};
use crate::report::Inputs;

pub const CONDITION_DIRS: [&str; 2] = ["real", "imagery"];

const STREAM_KNN_SPLIT: u64 = 0x5B1;
const STREAM_DL_SPLIT: u64 = 0xD15;

/// Digits compare by value, so `p2` sorts before `p10`.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn key(s: &str) -> (String, Option<u64>) {
        let digits = s.len() - s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (head, tail) = s.split_at(s.len() - digits);
        (head.to_string(), tail.parse().ok())
    }
    key(a).cmp(&key(b)).then_with(|| a.cmp(b))
}

/// Subdirectories of `root` holding both condition containers.
pub fn discover(root: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(root, e))?;
        let path = entry.path();
        if CONDITION_DIRS.iter().all(|c| path.join(c).join(MANIFEST_FILE).is_file()) {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort_by(|a, b| natural_cmp(a, b));
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct Participant {
    pub id: String,
    /// Position in the selection; keys every per-participant stream.
    pub index: usize,
    pub real: Recording,
    pub imagery: Recording,
}

/// Loads the selected participants (all discovered ones when the selection
/// is empty), hashing every file read.
pub fn load_participants(cfg: &ExperimentConfig) -> Result<(Vec<Participant>, Inputs)> {
    let root = cfg.require_root()?;
    let available = discover(root)?;
    let ids = if cfg.participants.is_empty() {
        available
    } else {
        if let Some(missing) = cfg.participants.iter().find(|p| !available.contains(p)) {
            return Err(CliError::Data(format!(
                "participant {missing} has no real/ and imagery/ containers under {}",
                root.display()
            )));
        }
        cfg.participants.clone()
    };
    if ids.is_empty() {
        return Err(CliError::Data(format!("no participants found under {}", root.display())));
    }
    let loaded: Vec<(Participant, Inputs)> = ids
        .par_iter()
        .enumerate()
        .map(|(index, id)| {
            let mut inputs = Inputs::default();
            for c in CONDITION_DIRS {
                for f in [MANIFEST_FILE, VOLTAGE_FILE] {
                    inputs.add(format!("{id}/{c}/{f}"), &root.join(id).join(c).join(f))?;
                }
            }
            let real = load_recording(root.join(id).join("real"))?;
            let imagery = load_recording(root.join(id).join("imagery"))?;
            Ok((Participant { id: id.clone(), index, real, imagery }, inputs))
        })
        .collect::<Result<_>>()?;
    let mut all = Inputs::default();
    let mut participants = Vec::with_capacity(loaded.len());
    for (p, i) in loaded {
        all.extend(i);
        participants.push(p);
    }
    info!("loaded {} participants", participants.len());
    Ok((participants, all))
}

/// `cfg` with both channel caps lowered to the widest loaded recording, so a
/// cohort narrower than the cap is not padded with null channels.
pub fn effective_config(cfg: &ExperimentConfig, ps: &[Participant]) -> ExperimentConfig {
    let widest = ps.iter().flat_map(|p| [p.real.channel_count(), p.imagery.channel_count()]).max().unwrap_or(1);
    let mut out = cfg.clone();
    out.epoching.channel_cap_umap = cfg.epoching.channel_cap_umap.min(widest);
    out.epoching.channel_cap_dl = cfg.epoching.channel_cap_dl.min(widest);
    out
}

/// A participant's sessions after the power envelope.
#[derive(Debug, Clone)]
pub struct Enveloped {
    pub real: Recording,
    pub imagery: Recording,
}

pub fn envelope(p: &Participant, cfg: &ExperimentConfig) -> Result<Enveloped> {
    Ok(Enveloped {
        real: envelope_recording(&p.real, &cfg.envelope)?,
        imagery: envelope_recording(&p.imagery, &cfg.envelope)?,
    })
}

/// Stimulus-locked epochs of one session, labeled by condition.
pub fn condition_epochs(rec: &Recording, cfg: &ExperimentConfig) -> Result<EpochSet> {
    Ok(extract_stimulus_epochs(rec, cfg.epoching.stimulus_window, LabelScheme::Condition)?)
}

/// Real and imagery envelope epochs pooled, decimated, scaled to [0, 1]
/// jointly (so amplitude differences between conditions survive) and
/// capped to `cap` channels.
pub fn processed_epochs(env: &Enveloped, cfg: &ExperimentConfig, cap: usize) -> Result<EpochSet> {
    let both = EpochSet::concat(&[condition_epochs(&env.real, cfg)?, condition_epochs(&env.imagery, cfg)?])?;
    let scaled = normalize_unit(&decimate(&both, cfg.epoching.decimate)?);
    Ok(fit_channels(&scaled, cap)?)
}

/// Raw voltage epochs of both conditions, capped to `cap` channels.
pub fn unprocessed_epochs(p: &Participant, cfg: &ExperimentConfig, cap: usize) -> Result<EpochSet> {
    let both = EpochSet::concat(&[condition_epochs(&p.real, cfg)?, condition_epochs(&p.imagery, cfg)?])?;
    Ok(fit_channels(&both, cap)?)
}

/// Tongue / hand / rest envelope epochs of the real session.
pub fn interval_epochs(env: &Enveloped, cfg: &ExperimentConfig, cap: usize) -> Result<EpochSet> {
    let e = extract_interval_epochs(&env.real, cfg.epoching.interval_window)?;
    Ok(fit_channels(&normalize_unit(&decimate(&e, cfg.epoching.decimate)?), cap)?)
}

fn split(epochs: &EpochSet, cfg: &ExperimentConfig, stream: u64, index: usize) -> Result<SplitPair> {
    Ok(split_train_test(epochs, cfg.epoching.split_ratio, rng::derive(cfg.seed, &[stream, index as u64]))?)
}

/// Train/test splits of the variants the config asks for.
pub fn knn_data(p: &Participant, env: Option<&Enveloped>, cfg: &ExperimentConfig) -> Result<ParticipantData> {
    let cap = cfg.epoching.channel_cap_umap;
    let processed = match (cfg.variant.processed(), env) {
        (true, Some(env)) => Some(split(&processed_epochs(env, cfg, cap)?, cfg, STREAM_KNN_SPLIT, p.index)?),
        (true, None) => Some(split(&processed_epochs(&envelope(p, cfg)?, cfg, cap)?, cfg, STREAM_KNN_SPLIT, p.index)?),
        (false, _) => None,
    };
    let unprocessed = if cfg.variant.unprocessed() {
        Some(split(&unprocessed_epochs(p, cfg, cap)?, cfg, STREAM_KNN_SPLIT, p.index)?)
    } else {
        None
    };
    Ok(ParticipantData { participant_id: p.id.clone(), processed, unprocessed })
}

/// The supervised task's split for one participant.
pub fn dl_split(p: &Participant, env: &Enveloped, task: Task, cfg: &ExperimentConfig) -> Result<SplitPair> {
    let cap = cfg.epoching.channel_cap_dl;
    let epochs = match task {
        Task::ThreeClass => interval_epochs(env, cfg, cap)?,
        Task::TwoClass => processed_epochs(env, cfg, cap)?,
    };
    split(&epochs, cfg, STREAM_DL_SPLIT, p.index)
}
