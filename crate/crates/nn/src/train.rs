//! Mini-batch training, evaluation history and fine-tuning.

use ecog_core::dataset::{EpochSet, SplitPair};
use ecog_core::rng;
use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::layers::{Cache, Ctx, LayerSpec, BN_MOMENTUM};
use crate::model::{dropout_stream, evaluate_tensor, loss_and_gradients, Evaluation, ModelGraph};
use crate::tensor::{epochs_to_tensor, one_hot_tensor, TensorN};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Loss {
    #[default]
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub loss: Loss,
    /// Stop after this many epochs without held-out improvement and restore
    /// the best weights; `None` trains for the full budget.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            optimizer: Optimizer::Adam,
            loss: Loss::CategoricalCrossEntropy,
            patience: Some(10),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::invalid(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::invalid("batch size must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// Where a fine-tuned model's starting weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the source model file bytes.
    pub source_sha256: String,
    pub source_seed: u64,
    pub source_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept, if early stopping restored them.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub fine_tuned_from: Option<Provenance>,
}

impl History {
    /// `epoch,train_loss,train_acc,test_acc`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.epoch, r.train_loss, r.train_acc, r.test_acc));
        }
        out
    }
}

struct AdamState {
    m: Vec<Vec<Vec<f32>>>,
    v: Vec<Vec<Vec<f32>>>,
    t: i32,
}

const ADAM_B1: f32 = 0.9;
const ADAM_B2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-7;

fn step(model: &mut ModelGraph, grads: &[Vec<TensorN>], cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate as f32;
    adam.t += 1;
    let (c1, c2) = (1.0 - ADAM_B1.powi(adam.t), 1.0 - ADAM_B2.powi(adam.t));
    let layers = model.layers().to_vec();
    for (li, (spec, lp)) in layers.iter().zip(model.params_mut().iter_mut()).enumerate() {
        for pi in 0..spec.trainable_count() {
            let g = grads[li][pi].data();
            let p = lp[pi].data_mut();
            match cfg.optimizer {
                Optimizer::Sgd => p.iter_mut().zip(g).for_each(|(w, &gv)| *w -= lr * gv),
                Optimizer::Adam => {
                    let (m, v) = (&mut adam.m[li][pi], &mut adam.v[li][pi]);
                    for j in 0..p.len() {
                        m[j] = ADAM_B1 * m[j] + (1.0 - ADAM_B1) * g[j];
                        v[j] = ADAM_B2 * v[j] + (1.0 - ADAM_B2) * g[j] * g[j];
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Folds a batch's mean and variance into BatchNorm running statistics.
fn update_running_stats(model: &mut ModelGraph, caches: &[Cache<f32>]) {
    let layers = model.layers().to_vec();
    for (i, spec) in layers.iter().enumerate() {
        if *spec != LayerSpec::BatchNorm {
            continue;
        }
        if let Some((mean, var)) = caches[i].batch_stats() {
            let mom = BN_MOMENTUM as f32;
            let p = &mut model.params_mut()[i];
            for (r, &b) in p[2].data_mut().iter_mut().zip(mean) {
                *r = mom * *r + (1.0 - mom) * b;
            }
            for (r, &b) in p[3].data_mut().iter_mut().zip(var) {
                *r = mom * *r + (1.0 - mom) * b;
            }
        }
    }
}

fn better(a: &Evaluation, best: &Evaluation) -> bool {
    a.accuracy > best.accuracy || (a.accuracy == best.accuracy && a.loss < best.loss)
}

/// Trains `model` in place of a copy and returns it with its history.
///
/// Batches follow a per-epoch shuffle stream and dropout masks a per-batch
/// stream, both derived from `cfg.seed`, so `(data, config, seed)` fixes the
/// result bit for bit. After each epoch the held-out split is scored; with
/// `patience` set, training stops once it has not improved (accuracy, then
/// loss) for that many epochs and the best weights are restored.
pub fn train(model: &ModelGraph, split: &SplitPair, cfg: &TrainConfig) -> Result<ModelGraph> {
    let mut m = model.clone();
    m.history = History::default();
    fit(&mut m, &split.train, &split.test, cfg)?;
    Ok(m)
}

/// Continues training from `pretrained` without reinitializing, recording
/// the source model's hash in the history.
pub fn fine_tune(pretrained: &ModelGraph, split: &SplitPair, cfg: &TrainConfig) -> Result<ModelGraph> {
    let n_classes = split.train.n_classes().max(split.test.n_classes());
    if n_classes > pretrained.n_classes() {
        return Err(NnError::invalid(format!(
            "pretrained head has {} classes, target task needs {n_classes}",
            pretrained.n_classes()
        )));
    }
    let item = [split.train.n_times(), split.train.n_channels(), 1];
    if pretrained.input_shape() != item {
        return Err(NnError::invalid(format!(
            "pretrained model expects input {:?}, target epochs are {item:?}",
            pretrained.input_shape()
        )));
    }
    let provenance = Provenance {
        source_sha256: crate::io::content_hash(pretrained),
        source_seed: pretrained.seed(),
        source_epochs: pretrained.history().records.len(),
    };
    let mut m = pretrained.clone();
    m.history = History { fine_tuned_from: Some(provenance), ..History::default() };
    fit(&mut m, &split.train, &split.test, cfg)?;
    Ok(m)
}

const STREAM_SHUFFLE: u64 = 0x5AF;

fn fit(m: &mut ModelGraph, train: &EpochSet, test: &EpochSet, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(NnError::invalid("training needs non-empty train and test sets"));
    }
    let x = epochs_to_tensor(train);
    let y: TensorN = one_hot_tensor(train.labels(), m.n_classes())?;
    let xt = epochs_to_tensor(test);
    one_hot_tensor::<f32>(test.labels(), m.n_classes())?;

    let zeros = |m: &ModelGraph| -> Vec<Vec<Vec<f32>>> {
        m.params().iter().map(|l| l.iter().map(|p| vec![0.0; p.len()]).collect()).collect()
    };
    let mut adam = AdamState { m: zeros(m), v: zeros(m), t: 0 };
    let mut best: Option<(Evaluation, usize, Vec<Vec<TensorN>>)> = None;
    let mut since_best = 0;
    let n = train.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.gather(idx);
            let yb = y.gather(idx);
            let mut drop_rng = dropout_stream(cfg.seed, epoch, b);
            let mut ctx = Ctx { train: true, rng: Some(&mut drop_rng) };
            let pass = match loss_and_gradients(m.layers(), m.params(), &xb, &yb, &mut ctx) {
                Ok(p) if p.loss.is_finite() => p,
                Ok(_) | Err(NnError::NonFinite { .. }) => return Err(NnError::Divergence { epoch, batch: b }),
                Err(e) => return Err(e),
            };
            loss_sum += pass.loss as f64 * idx.len() as f64;
            correct += pass.logits.argmax_rows().iter().zip(idx).filter(|(p, &i)| **p == train.labels()[i]).count();
            update_running_stats(m, &pass.caches);
            step(m, &pass.grads, cfg, &mut adam);
        }
        let eval = evaluate_tensor(m, &xt, test.labels()).map_err(|e| match e {
            NnError::NonFinite { .. } => NnError::Divergence { epoch, batch: n.div_ceil(cfg.batch_size) },
            e => e,
        })?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_loss: eval.loss,
            test_acc: eval.accuracy,
        };
        debug!("epoch {epoch}: loss {:.4} acc {:.3} test {:.3}", rec.train_loss, rec.train_acc, rec.test_acc);
        m.history.records.push(rec);
        if cfg.patience.is_none() {
            continue;
        }
        match &best {
            Some((b, _, _)) if !better(&eval, b) => since_best += 1,
            _ => {
                best = Some((eval, epoch, m.params().to_vec()));
                since_best = 0;
            }
        }
        if since_best >= cfg.patience.unwrap() {
            m.history.stopped_early = true;
            break;
        }
    }
    if let Some((_, epoch, params)) = best {
        *m.params_mut() = params;
        m.history.best_epoch = Some(epoch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_csv_header() {
        let h = History {
            records: vec![EpochRecord { epoch: 0, train_loss: 0.5, train_acc: 0.75, test_loss: 0.6, test_acc: 0.5 }],
            ..Default::default()
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,train_acc,test_acc\n0,0.500000,0.750000,0.500000\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
    }
}
