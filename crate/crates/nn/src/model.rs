//! Sequential model graphs and whole-network passes.

use ecog_core::dataset::EpochSet;
use ecog_core::rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{self, softmax_cross_entropy, Cache, Ctx, LayerSpec, Padding};
use crate::tensor::{epochs_to_tensor, one_hot_tensor, Scalar, Tensor, TensorN};
use crate::train::History;
use crate::{NnError, Result};

const STREAM_INIT: u64 = 0x1A17;
/// Inference batch size; bounds activation memory only.
const EVAL_BATCH: usize = 64;

/// Layer stack, parameters and provenance of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    params: Vec<Vec<TensorN>>,
    n_classes: usize,
    seed: u64,
    pub(crate) history: History,
}

/// Per-layer shapes, input first.
fn infer_shapes(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input_shape.to_vec()];
    for (i, l) in layers.iter().enumerate() {
        let next = l.output_shape(shapes.last().unwrap()).map_err(|msg| NnError::Shape {
            layer: i,
            name: l.name().into(),
            msg,
        })?;
        shapes.push(next);
    }
    Ok(shapes)
}

impl ModelGraph {
    /// Builds and initializes a model. The stack must end in
    /// `Dense{n_classes} → Softmax`.
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, n_classes: usize, seed: u64) -> Result<Self> {
        let shapes = Self::check(&layers, &input_shape, n_classes)?;
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.init_params(&shapes[i], &mut rng::stream(seed, &[STREAM_INIT, i as u64])))
            .collect();
        Ok(Self { layers, input_shape, params, n_classes, seed, history: History::default() })
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        params: Vec<Vec<TensorN>>,
        n_classes: usize,
        seed: u64,
        history: History,
    ) -> Result<Self> {
        let shapes = Self::check(&layers, &input_shape, n_classes)?;
        for (i, l) in layers.iter().enumerate() {
            let expected = l.param_shapes(&shapes[i]);
            if params[i].len() != expected.len()
                || params[i].iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice())
            {
                return Err(NnError::Shape { layer: i, name: l.name().into(), msg: "parameter shapes differ".into() });
            }
        }
        Ok(Self { layers, input_shape, params, n_classes, seed, history })
    }

    fn check(layers: &[LayerSpec], input_shape: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
        if !(2..=3).contains(&n_classes) {
            return Err(NnError::invalid(format!("head size {n_classes} unsupported (2 or 3 classes)")));
        }
        match layers {
            [.., LayerSpec::Dense { units }, LayerSpec::Softmax] if *units == n_classes => {}
            _ => {
                return Err(NnError::invalid(format!("model must end in Dense{{{n_classes}}} → Softmax")));
            }
        }
        infer_shapes(layers, input_shape)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Item shape without batch dimension, e.g. `[time, channels, 1]`.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn params(&self) -> &[Vec<TensorN>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<Vec<TensorN>> {
        &mut self.params
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Parameters widened to `f64` for the gradient-check mirror.
    pub fn params_f64(&self) -> Vec<Vec<Tensor<f64>>> {
        self.params.iter().map(|l| l.iter().map(Tensor::cast).collect()).collect()
    }

    /// Replaces the final Dense layer's parameters with zeros.
    pub fn zero_head(&mut self) {
        let last_dense = self.layers.len() - 2;
        for p in &mut self.params[last_dense] {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() < 2 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::Shape {
                layer: 0,
                name: self.layers[0].name().into(),
                msg: format!("model expects [n, {:?}], got {:?}", self.input_shape, x.shape()),
            });
        }
        Ok(())
    }

    /// Class probabilities, `[n, n_classes]`. Train mode enables dropout,
    /// drawn from a stream fixed by the model seed.
    pub fn forward(&self, x: &TensorN, train_mode: bool) -> Result<TensorN> {
        self.check_input(x)?;
        if train_mode {
            let mut r = rng::stream(self.seed, &[0xF0D]);
            let mut ctx = Ctx { train: true, rng: Some(&mut r) };
            return Ok(forward_all(&self.layers, &self.params, x, &mut ctx)?.0);
        }
        let mut out = Vec::with_capacity(x.batch() * self.n_classes);
        for chunk in (0..x.batch()).collect::<Vec<_>>().chunks(EVAL_BATCH) {
            let (p, _) = forward_all(&self.layers, &self.params, &x.gather(chunk), &mut Ctx::eval())?;
            out.extend_from_slice(p.data());
        }
        Tensor::new(vec![x.batch(), self.n_classes], out)
    }

    /// Eval-mode loss and parameter gradients for one batch.
    pub fn backward(&self, x: &TensorN, targets: &TensorN) -> Result<(f32, Vec<Vec<TensorN>>)> {
        self.check_input(x)?;
        let pass = loss_and_gradients(&self.layers, &self.params, x, targets, &mut Ctx::eval())?;
        Ok((pass.loss, pass.grads))
    }

    /// Mean cross-entropy and argmax accuracy over an epoch set.
    pub fn evaluate(&self, test: &EpochSet) -> Result<Evaluation> {
        if test.is_empty() {
            return Err(NnError::invalid("cannot evaluate on an empty test set"));
        }
        evaluate_tensor(self, &epochs_to_tensor(test), test.labels())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

pub(crate) fn evaluate_tensor(model: &ModelGraph, x: &TensorN, labels: &[usize]) -> Result<Evaluation> {
    model.check_input(x)?;
    let targets: TensorN = one_hot_tensor(labels, model.n_classes)?;
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let idx: Vec<usize> = (0..x.batch()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let xb = x.gather(chunk);
        let (logits, _) = forward_logits(&model.layers, &model.params, &xb, &mut Ctx::eval())?;
        let (l, _) = softmax_cross_entropy(&logits, &targets.gather(chunk))?;
        loss += l as f64 * chunk.len() as f64;
        correct += logits.argmax_rows().iter().zip(chunk).filter(|(p, &i)| **p == labels[i]).count();
    }
    let n = x.batch() as f64;
    Ok(Evaluation { loss: loss / n, accuracy: correct as f64 / n })
}

/// All layers, returning the output and every cache.
pub fn forward_all<T: Scalar>(
    layers: &[LayerSpec],
    params: &[Vec<Tensor<T>>],
    x: &Tensor<T>,
    ctx: &mut Ctx<'_>,
) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for (i, (l, p)) in layers.iter().zip(params).enumerate() {
        let (out, cache) = layers::forward(l, i, p, &cur, ctx)?;
        caches.push(cache);
        cur = out;
    }
    Ok((cur, caches))
}

/// Every layer but the final Softmax.
fn forward_logits<T: Scalar>(
    layers: &[LayerSpec],
    params: &[Vec<Tensor<T>>],
    x: &Tensor<T>,
    ctx: &mut Ctx<'_>,
) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
    let n = layers.len() - 1;
    forward_all(&layers[..n], &params[..n], x, ctx)
}

/// Result of one differentiated pass.
pub struct Pass<T> {
    pub loss: T,
    pub grads: Vec<Vec<Tensor<T>>>,
    pub logits: Tensor<T>,
    /// Caches of every layer but the final Softmax.
    pub caches: Vec<Cache<T>>,
}

/// Loss and gradients for a stack ending in Softmax. Softmax and
/// cross-entropy are differentiated jointly.
pub fn loss_and_gradients<T: Scalar>(
    layers: &[LayerSpec],
    params: &[Vec<Tensor<T>>],
    x: &Tensor<T>,
    targets: &Tensor<T>,
    ctx: &mut Ctx<'_>,
) -> Result<Pass<T>> {
    if !matches!(layers.last(), Some(LayerSpec::Softmax)) {
        return Err(NnError::invalid("cross-entropy training needs a final Softmax layer"));
    }
    let (logits, caches) = forward_logits(layers, params, x, ctx)?;
    let (loss, mut dy) = softmax_cross_entropy(&logits, targets)?;
    let mut grads = vec![Vec::new(); layers.len()];
    for i in (0..layers.len() - 1).rev() {
        let (dx, g) = layers::backward(&layers[i], &params[i], &caches[i], &dy)?;
        grads[i] = g;
        dy = dx;
    }
    Ok(Pass { loss, grads, logits, caches })
}

/// Architecture family of the default classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Cnn,
    CnnLstm,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::CnnLstm => "cnn-lstm",
        }
    }
}

/// Knobs of the default architectures; the defaults reproduce the reference
/// CNN (8@5×5, 16@3×3, dropout 0.3) and CNN-LSTM (32 units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub family: Family,
    /// First conv layer; the second has twice as many.
    pub filters: usize,
    /// First conv kernel side; the second uses `max(kernel − 2, 1)`.
    pub kernel: usize,
    pub dropout: f64,
    pub dense_units: usize,
    pub lstm_units: usize,
    pub batch_norm: bool,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            family: Family::Cnn,
            filters: 8,
            kernel: 5,
            dropout: 0.3,
            dense_units: 64,
            lstm_units: 32,
            batch_norm: false,
        }
    }
}

impl ArchParams {
    pub fn layers(&self, n_classes: usize) -> Vec<LayerSpec> {
        let conv =
            |filters, k| LayerSpec::Conv2D { filters, kernel_h: k, kernel_w: k, stride: 1, padding: Padding::Same };
        let pool = LayerSpec::MaxPool2D { pool_h: 2, pool_w: 2 };
        let mut out = vec![conv(self.filters, self.kernel)];
        if self.batch_norm {
            out.push(LayerSpec::BatchNorm);
        }
        out.extend([LayerSpec::ReLU, pool, conv(2 * self.filters, self.kernel.saturating_sub(2).max(1))]);
        if self.batch_norm {
            out.push(LayerSpec::BatchNorm);
        }
        out.extend([LayerSpec::ReLU, pool]);
        match self.family {
            Family::Cnn => out.extend([
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: self.dropout },
                LayerSpec::Dense { units: self.dense_units },
                LayerSpec::ReLU,
            ]),
            Family::CnnLstm => out.extend([
                LayerSpec::SeqFlatten,
                LayerSpec::Dropout { rate: self.dropout },
                LayerSpec::LSTM { units: self.lstm_units },
            ]),
        }
        out.extend([LayerSpec::Dense { units: n_classes }, LayerSpec::Softmax]);
        out
    }

    pub fn build(&self, input_shape: &[usize], n_classes: usize, seed: u64) -> Result<ModelGraph> {
        ModelGraph::new(self.layers(n_classes), input_shape.to_vec(), n_classes, seed)
    }
}

/// Random stream for one optimization step's dropout masks.
pub(crate) fn dropout_stream(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    rng::stream(seed, &[0xD80, epoch as u64, batch as u64])
}
