//! Random hyperparameter search with a persisted leaderboard.

use ecog_core::dataset::SplitPair;
use ecog_core::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ArchParams, Family, ModelGraph};
use crate::train::{train, TrainConfig};
use crate::{NnError, Result};

const STREAM_SEARCH: u64 = 0x5EA;

/// Inclusive sampling ranges. Learning rate is log-uniform, the rest uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub filters: (usize, usize),
    pub kernel: (usize, usize),
    pub lstm_units: (usize, usize),
    pub dropout: (f64, f64),
    /// When set, each trial flips a coin for BatchNorm after every conv.
    pub batch_norm: bool,
    pub n_trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (3e-4, 3e-3),
            filters: (4, 16),
            kernel: (3, 7),
            lstm_units: (16, 64),
            dropout: (0.0, 0.5),
            batch_norm: false,
            n_trials: 30,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(NnError::invalid(format!("learning-rate range {lo}..{hi} is empty or non-positive")));
        }
        for (name, (lo, hi)) in [("filters", self.filters), ("kernel", self.kernel), ("lstm_units", self.lstm_units)] {
            if lo == 0 || lo > hi {
                return Err(NnError::invalid(format!("{name} range {lo}..{hi} is empty or zero")));
            }
        }
        let (lo, hi) = self.dropout;
        if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
            return Err(NnError::invalid(format!("dropout range {lo}..{hi} must lie in [0, 1)")));
        }
        if self.n_trials == 0 {
            return Err(NnError::invalid("trial budget must be at least 1"));
        }
        Ok(())
    }

    fn sample(&self, base: &ArchParams, r: &mut ChaCha8Rng) -> (ArchParams, f64) {
        let (lo, hi) = self.learning_rate;
        let lr = if lo == hi { lo } else { (r.random_range(lo.ln()..=hi.ln())).exp() };
        let arch = ArchParams {
            filters: r.random_range(self.filters.0..=self.filters.1),
            kernel: r.random_range(self.kernel.0..=self.kernel.1),
            lstm_units: r.random_range(self.lstm_units.0..=self.lstm_units.1),
            dropout: if self.dropout.0 == self.dropout.1 {
                self.dropout.0
            } else {
                r.random_range(self.dropout.0..=self.dropout.1)
            },
            batch_norm: self.batch_norm && r.random_bool(0.5),
            ..*base
        };
        (arch, lr)
    }
}

/// What is being tuned: architecture family, input and head, and the
/// training budget shared by all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub input_shape: Vec<usize>,
    pub n_classes: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub arch: ArchParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

/// Trials ranked by test accuracy, then test loss, then trial index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub entries: Vec<TrialResult>,
}

impl Leaderboard {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("leaderboard serializes")
    }
}

pub struct SearchOutcome {
    pub best: TrialResult,
    pub model: ModelGraph,
    pub leaderboard: Leaderboard,
}

/// Samples `space.n_trials` configurations from a stream fixed by `seed`,
/// trains each (in parallel; each trial owns its seed) and ranks them.
pub fn hyper_search(space: &SearchSpace, task: &TaskSpec, split: &SplitPair, seed: u64) -> Result<SearchOutcome> {
    space.validate()?;
    let base = ArchParams { family: task.family, ..ArchParams::default() };
    let mut r = rng::stream(seed, &[STREAM_SEARCH]);
    let configs: Vec<TrialConfig> = (0..space.n_trials)
        .map(|trial| {
            let (arch, learning_rate) = space.sample(&base, &mut r);
            TrialConfig { trial, seed: rng::derive(seed, &[STREAM_SEARCH, trial as u64]), learning_rate, arch }
        })
        .collect();
    let mut results: Vec<(TrialResult, ModelGraph)> = configs
        .into_par_iter()
        .map(|config| {
            let model = config.arch.build(&task.input_shape, task.n_classes, config.seed)?;
            let cfg = TrainConfig { learning_rate: config.learning_rate, seed: config.seed, ..task.train };
            let trained = train(&model, split, &cfg)?;
            let test = trained.evaluate(&split.test)?;
            let tr = trained.evaluate(&split.train)?;
            let result = TrialResult {
                test_accuracy: test.accuracy,
                test_loss: test.loss,
                train_accuracy: tr.accuracy,
                epochs_run: trained.history().records.len(),
                config,
            };
            Ok((result, trained))
        })
        .collect::<Result<_>>()?;
    results.sort_by(|(a, _), (b, _)| {
        b.test_accuracy
            .total_cmp(&a.test_accuracy)
            .then(a.test_loss.total_cmp(&b.test_loss))
            .then(a.config.trial.cmp(&b.config.trial))
    });
    let leaderboard = Leaderboard { entries: results.iter().map(|(r, _)| r.clone()).collect() };
    let (best, model) = results.into_iter().next().expect("at least one trial");
    Ok(SearchOutcome { best, model, leaderboard })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_rejected() {
        let s = SearchSpace { n_trials: 0, ..Default::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_ranges_rejected() {
        assert!(SearchSpace { filters: (5, 4), ..Default::default() }.validate().is_err());
        assert!(SearchSpace { learning_rate: (0.0, 1e-3), ..Default::default() }.validate().is_err());
        assert!(SearchSpace { dropout: (0.2, 1.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn samples_stay_in_range() {
        let s = SearchSpace::default();
        let mut r = rng::stream(1, &[]);
        for _ in 0..200 {
            let (a, lr) = s.sample(&ArchParams::default(), &mut r);
            assert!((3e-4..=3e-3).contains(&lr));
            assert!((4..=16).contains(&a.filters) && (3..=7).contains(&a.kernel));
            assert!((0.0..=0.5).contains(&a.dropout));
            assert!(!a.batch_norm);
        }
    }
}
