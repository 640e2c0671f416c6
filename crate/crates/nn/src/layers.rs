//! Layer definitions and their forward / backward passes.
//!
//! Activations are batch-first. Image layers use NHWC (`[n, time, channels,
//! features]`), sequence layers `[n, steps, features]`, dense layers `[n, f]`.
//! Every pass is generic over [`Scalar`] so the same code serves `f32`
//! training and the `f64` gradient-check mirror.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{c, Scalar, Tensor};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Conv2D {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    },
    /// Non-overlapping windows (stride = pool size); remainders are dropped.
    MaxPool2D {
        pool_h: usize,
        pool_w: usize,
    },
    ReLU,
    /// Inverted dropout: active only in train mode.
    Dropout {
        rate: f64,
    },
    Flatten,
    /// `[h, w, c] → [h, w·c]`: one feature vector per time step.
    SeqFlatten,
    Dense {
        units: usize,
    },
    /// Returns the last hidden state. Gate blocks are ordered input, forget,
    /// cell, output.
    LSTM {
        units: usize,
    },
    /// Normalizes over every axis but the last; running statistics for eval.
    BatchNorm,
    Softmax,
}

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool2D { .. } => "MaxPool2D",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::SeqFlatten => "SeqFlatten",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::LSTM { .. } => "LSTM",
            LayerSpec::BatchNorm => "BatchNorm",
            LayerSpec::Softmax => "Softmax",
        }
    }

    /// Parameters updated by the optimizer; BatchNorm's running statistics
    /// follow them in the parameter list.
    pub fn trainable_count(&self) -> usize {
        match self {
            LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. } | LayerSpec::BatchNorm => 2,
            LayerSpec::LSTM { .. } => 3,
            _ => 0,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |v: usize, what: &str| if v == 0 { Err(format!("{what} must be positive")) } else { Ok(()) };
        match *self {
            LayerSpec::Conv2D { filters, kernel_h, kernel_w, stride, .. } => {
                positive(filters, "filters")?;
                positive(kernel_h, "kernel_h")?;
                positive(kernel_w, "kernel_w")?;
                positive(stride, "stride")
            }
            LayerSpec::MaxPool2D { pool_h, pool_w } => {
                positive(pool_h, "pool_h")?;
                positive(pool_w, "pool_w")
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(format!("dropout rate {rate} outside [0, 1)"))
            }
            LayerSpec::Dense { units } | LayerSpec::LSTM { units } => positive(units, "units"),
            _ => Ok(()),
        }
    }

    /// Output shape (without batch dimension) for input shape `s`.
    pub fn output_shape(&self, s: &[usize]) -> std::result::Result<Vec<usize>, String> {
        self.validate()?;
        let rank = |r: usize| {
            if s.len() == r {
                Ok(())
            } else {
                Err(format!("expects rank-{r} input, got {s:?}"))
            }
        };
        match *self {
            LayerSpec::Conv2D { filters, kernel_h, kernel_w, stride, padding } => {
                rank(3)?;
                let (oh, _) = conv_geometry(s[0], kernel_h, stride, padding);
                let (ow, _) = conv_geometry(s[1], kernel_w, stride, padding);
                if oh == 0 || ow == 0 {
                    return Err(format!("kernel {kernel_h}x{kernel_w} does not fit input {s:?}"));
                }
                Ok(vec![oh, ow, filters])
            }
            LayerSpec::MaxPool2D { pool_h, pool_w } => {
                rank(3)?;
                let (oh, ow) = (s[0] / pool_h, s[1] / pool_w);
                if oh == 0 || ow == 0 {
                    return Err(format!("pool {pool_h}x{pool_w} does not fit input {s:?}"));
                }
                Ok(vec![oh, ow, s[2]])
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } | LayerSpec::BatchNorm => Ok(s.to_vec()),
            LayerSpec::Flatten => Ok(vec![s.iter().product()]),
            LayerSpec::SeqFlatten => {
                rank(3)?;
                Ok(vec![s[0], s[1] * s[2]])
            }
            LayerSpec::Dense { units } => {
                rank(1)?;
                Ok(vec![units])
            }
            LayerSpec::LSTM { units } => {
                rank(2)?;
                Ok(vec![units])
            }
            LayerSpec::Softmax => {
                rank(1)?;
                Ok(s.to_vec())
            }
        }
    }

    /// Parameter shapes for input shape `s` (already validated).
    pub fn param_shapes(&self, s: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2D { filters, kernel_h, kernel_w, .. } => {
                vec![vec![kernel_h, kernel_w, s[2], filters], vec![filters]]
            }
            LayerSpec::Dense { units } => vec![vec![s[0], units], vec![units]],
            LayerSpec::LSTM { units } => {
                vec![vec![s[1], 4 * units], vec![units, 4 * units], vec![4 * units]]
            }
            LayerSpec::BatchNorm => {
                let ch = *s.last().unwrap();
                vec![vec![ch]; 4]
            }
            _ => vec![],
        }
    }

    /// Glorot-uniform weights, zero biases (LSTM forget gate bias 1), unit
    /// BatchNorm scale and running variance.
    pub fn init_params<T: Scalar>(&self, s: &[usize], rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
        let shapes = self.param_shapes(s);
        let mut glorot = |shape: &[usize], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(shape, |_| c(rng.random_range(-limit..limit)))
        };
        match *self {
            LayerSpec::Conv2D { filters, kernel_h, kernel_w, .. } => {
                let area = kernel_h * kernel_w;
                vec![glorot(&shapes[0], area * s[2], area * filters), Tensor::zeros(&shapes[1])]
            }
            LayerSpec::Dense { units } => vec![glorot(&shapes[0], s[0], units), Tensor::zeros(&shapes[1])],
            LayerSpec::LSTM { units } => {
                let wx = glorot(&shapes[0], s[1], 4 * units);
                let wh = glorot(&shapes[1], units, 4 * units);
                let b = Tensor::from_fn(&shapes[2], |i| if i / units == 1 { T::one() } else { T::zero() });
                vec![wx, wh, b]
            }
            LayerSpec::BatchNorm => {
                let ch = shapes[0][0];
                vec![
                    Tensor::from_fn(&[ch], |_| T::one()),
                    Tensor::zeros(&[ch]),
                    Tensor::zeros(&[ch]),
                    Tensor::from_fn(&[ch], |_| T::one()),
                ]
            }
            _ => vec![],
        }
    }
}

/// Output length and leading pad for one spatial axis.
fn conv_geometry(n: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (if n >= k { (n - k) / stride + 1 } else { 0 }, 0),
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            (out, total / 2)
        }
    }
}

/// Per-pass state: train mode enables dropout and batch statistics.
pub struct Ctx<'a> {
    pub train: bool,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Ctx<'_> {
    pub fn eval() -> Ctx<'static> {
        Ctx { train: false, rng: None }
    }
}

/// What backward needs from forward.
#[derive(Debug, Clone)]
pub struct Cache<T>(CacheKind<T>);

#[derive(Debug, Clone)]
enum CacheKind<T> {
    Input(Tensor<T>),
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Mask(Option<Vec<T>>),
    Shape(Vec<usize>),
    Lstm(LstmCache<T>),
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T> },
    Softmax(Tensor<T>),
}

#[derive(Debug, Clone)]
struct LstmCache<T> {
    x: Tensor<T>,
    /// `[steps + 1][n·u]`, index 0 is the zero initial state.
    h: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    /// Post-activation gates per step, `[n, 4u]`.
    gates: Vec<Vec<T>>,
}

impl<T> Cache<T> {
    /// Batch mean and variance seen by a train-mode BatchNorm pass.
    pub fn batch_stats(&self) -> Option<(&[T], &[T])> {
        match &self.0 {
            CacheKind::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out[m×n] (+)= a[m×k] · b[k×n]`.
fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
fn matmul_at_b<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`.
fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let dot = arow.iter().zip(&b[p * n..(p + 1) * n]).fold(T::zero(), |s, (&x, &y)| s + x * y);
            out[i * k + p] = out[i * k + p] + dot;
        }
    }
}

fn shape_err(spec: &LayerSpec, layer: usize, msg: String) -> NnError {
    NnError::Shape { layer, name: spec.name().into(), msg }
}

/// Forward pass of one layer. `layer` only labels errors.
pub fn forward<T: Scalar>(
    spec: &LayerSpec,
    layer: usize,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    ctx: &mut Ctx<'_>,
) -> Result<(Tensor<T>, Cache<T>)> {
    let in_shape = &x.shape()[1..];
    let out_item = spec.output_shape(in_shape).map_err(|m| shape_err(spec, layer, m))?;
    let expected = spec.param_shapes(in_shape);
    if params.len() != expected.len() || params.iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice()) {
        return Err(shape_err(spec, layer, format!("parameters do not match input {in_shape:?}")));
    }
    let n = x.batch();
    let mut out_shape = vec![n];
    out_shape.extend_from_slice(&out_item);
    let (out, cache) = match *spec {
        LayerSpec::Conv2D { stride, padding, .. } => {
            (conv_forward(x, &params[0], &params[1], stride, padding, &out_shape), CacheKind::Input(x.clone()))
        }
        LayerSpec::MaxPool2D { pool_h, pool_w } => {
            let (out, argmax) = pool_forward(x, pool_h, pool_w, &out_shape);
            (out, CacheKind::Pool { argmax, in_shape: x.shape().to_vec() })
        }
        LayerSpec::ReLU => {
            let out = Tensor::from_fn(x.shape(), |i| x.data()[i].max(T::zero()));
            (out, CacheKind::Input(x.clone()))
        }
        LayerSpec::Dropout { rate } => match (ctx.train && rate > 0.0, ctx.rng.as_deref_mut()) {
            (true, Some(rng)) => {
                let scale: T = c(1.0 / (1.0 - rate));
                let mask: Vec<T> =
                    (0..x.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale }).collect();
                let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * mask[i]);
                (out, CacheKind::Mask(Some(mask)))
            }
            (true, None) => return Err(NnError::invalid("train-mode dropout needs a random stream")),
            _ => (x.clone(), CacheKind::Mask(None)),
        },
        LayerSpec::Flatten | LayerSpec::SeqFlatten => {
            (x.clone().reshape(out_shape)?, CacheKind::Shape(x.shape().to_vec()))
        }
        LayerSpec::Dense { units } => {
            let f = in_shape[0];
            let mut out = Tensor::from_fn(&out_shape, |i| params[1].data()[i % units]);
            matmul_acc(x.data(), params[0].data(), out.data_mut(), n, f, units);
            (out, CacheKind::Input(x.clone()))
        }
        LayerSpec::LSTM { units } => {
            let (out, cache) = lstm_forward(x, params, units);
            (out, CacheKind::Lstm(cache))
        }
        LayerSpec::BatchNorm => batchnorm_forward(x, params, ctx.train),
        LayerSpec::Softmax => {
            let out = softmax(x);
            (out.clone(), CacheKind::Softmax(out))
        }
    };
    if !out.all_finite() {
        return Err(NnError::NonFinite { layer, name: spec.name().into() });
    }
    Ok((out, Cache(cache)))
}

/// Backward pass: input gradient and one gradient per parameter tensor
/// (zero for BatchNorm running statistics).
pub fn backward<T: Scalar>(
    spec: &LayerSpec,
    params: &[Tensor<T>],
    cache: &Cache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let mismatch = || NnError::invalid(format!("{} cache does not match layer", spec.name()));
    Ok(match (spec, &cache.0) {
        (LayerSpec::Conv2D { stride, padding, .. }, CacheKind::Input(x)) => {
            conv_backward(x, &params[0], dy, *stride, *padding)
        }
        (LayerSpec::MaxPool2D { .. }, CacheKind::Pool { argmax, in_shape }) => {
            let mut dx = Tensor::zeros(in_shape);
            for (&src, &g) in argmax.iter().zip(dy.data()) {
                dx.data_mut()[src] = dx.data()[src] + g;
            }
            (dx, vec![])
        }
        (LayerSpec::ReLU, CacheKind::Input(x)) => {
            let dx = Tensor::from_fn(x.shape(), |i| if x.data()[i] > T::zero() { dy.data()[i] } else { T::zero() });
            (dx, vec![])
        }
        (LayerSpec::Dropout { .. }, CacheKind::Mask(mask)) => match mask {
            Some(m) => (Tensor::from_fn(dy.shape(), |i| dy.data()[i] * m[i]), vec![]),
            None => (dy.clone(), vec![]),
        },
        (LayerSpec::Flatten | LayerSpec::SeqFlatten, CacheKind::Shape(s)) => (dy.clone().reshape(s.clone())?, vec![]),
        (LayerSpec::Dense { units }, CacheKind::Input(x)) => {
            let (n, f) = (x.batch(), x.item_len());
            let mut dw = Tensor::zeros(params[0].shape());
            matmul_at_b(x.data(), dy.data(), dw.data_mut(), n, f, *units);
            let mut db = Tensor::zeros(&[*units]);
            for row in dy.data().chunks(*units) {
                for (b, &g) in db.data_mut().iter_mut().zip(row) {
                    *b = *b + g;
                }
            }
            let mut dx = Tensor::zeros(x.shape());
            matmul_a_bt(dy.data(), params[0].data(), dx.data_mut(), n, f, *units);
            (dx, vec![dw, db])
        }
        (LayerSpec::LSTM { units }, CacheKind::Lstm(lc)) => lstm_backward(lc, params, dy, *units),
        (LayerSpec::BatchNorm, CacheKind::BatchNorm { xhat, inv_std, .. }) => {
            batchnorm_backward(params, xhat, inv_std, dy, true)
        }
        (LayerSpec::BatchNorm, CacheKind::Input(x)) => {
            let ch = *x.shape().last().unwrap();
            let inv_std: Vec<T> = params[3].data().iter().map(|&v| T::one() / (v + c(BN_EPS)).sqrt()).collect();
            let xhat: Vec<T> =
                x.data().iter().enumerate().map(|(i, &v)| (v - params[2].data()[i % ch]) * inv_std[i % ch]).collect();
            batchnorm_backward(params, &xhat, &inv_std, dy, false)
        }
        (LayerSpec::Softmax, CacheKind::Softmax(p)) => {
            let k = p.item_len();
            let mut dx = Tensor::zeros(p.shape());
            for ((prow, grow), drow) in p.data().chunks(k).zip(dy.data().chunks(k)).zip(dx.data_mut().chunks_mut(k)) {
                let dot = prow.iter().zip(grow).fold(T::zero(), |s, (&a, &b)| s + a * b);
                for ((d, &pv), &gv) in drow.iter_mut().zip(prow).zip(grow) {
                    *d = pv * (gv - dot);
                }
            }
            (dx, vec![])
        }
        _ => return Err(mismatch()),
    })
}

fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: Padding,
    out_shape: &[usize],
) -> Tensor<T> {
    let (n, h, wd, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, f) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let pt = conv_geometry(h, kh, stride, padding).1;
    let pl = conv_geometry(wd, kw, stride, padding).1;
    let mut out = Tensor::zeros(out_shape);
    let (xd, wdata, od) = (x.data(), w.data(), out.data_mut());
    for img in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                let ob = ((img * oh + y) * ow + xo) * f;
                let orow = &mut od[ob..ob + f];
                orow.copy_from_slice(b.data());
                for ky in 0..kh {
                    let iy = (y * stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (xo * stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let xb = ((img * h + iy as usize) * wd + ix as usize) * ci;
                        let wb = (ky * kw + kx) * ci * f;
                        for ch in 0..ci {
                            let xv = xd[xb + ch];
                            let wrow = &wdata[wb + ch * f..wb + (ch + 1) * f];
                            for (o, &wv) in orow.iter_mut().zip(wrow) {
                                *o = *o + xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> (Tensor<T>, Vec<Tensor<T>>) {
    let (n, h, wd, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, f) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
    let pt = conv_geometry(h, kh, stride, padding).1;
    let pl = conv_geometry(wd, kw, stride, padding).1;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[f]);
    let (xd, wdata, gd) = (x.data(), w.data(), dy.data());
    for img in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                let ob = ((img * oh + y) * ow + xo) * f;
                let grow = &gd[ob..ob + f];
                for (d, &g) in db.data_mut().iter_mut().zip(grow) {
                    *d = *d + g;
                }
                for ky in 0..kh {
                    let iy = (y * stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (xo * stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let xb = ((img * h + iy as usize) * wd + ix as usize) * ci;
                        let wb = (ky * kw + kx) * ci * f;
                        for ch in 0..ci {
                            let xv = xd[xb + ch];
                            let wrow = &wdata[wb + ch * f..wb + (ch + 1) * f];
                            let dwrow = &mut dw.data_mut()[wb + ch * f..wb + (ch + 1) * f];
                            let mut acc = T::zero();
                            for ((dwv, &wv), &g) in dwrow.iter_mut().zip(wrow).zip(grow) {
                                *dwv = *dwv + xv * g;
                                acc = acc + wv * g;
                            }
                            dx.data_mut()[xb + ch] = dx.data()[xb + ch] + acc;
                        }
                    }
                }
            }
        }
    }
    (dx, vec![dw, db])
}

/// Max over each window; ties go to the first position in row-major order.
fn pool_forward<T: Scalar>(x: &Tensor<T>, ph: usize, pw: usize, out_shape: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let (h, wd, ch) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (n, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out.len()];
    for img in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                for c_ in 0..ch {
                    let mut best = (usize::MAX, T::neg_infinity());
                    for dy_ in 0..ph {
                        for dx_ in 0..pw {
                            let idx = ((img * h + y * ph + dy_) * wd + xo * pw + dx_) * ch + c_;
                            if best.0 == usize::MAX || x.data()[idx] > best.1 {
                                best = (idx, x.data()[idx]);
                            }
                        }
                    }
                    let o = ((img * oh + y) * ow + xo) * ch + c_;
                    out.data_mut()[o] = best.1;
                    argmax[o] = best.0;
                }
            }
        }
    }
    (out, argmax)
}

fn lstm_forward<T: Scalar>(x: &Tensor<T>, params: &[Tensor<T>], u: usize) -> (Tensor<T>, LstmCache<T>) {
    let (n, steps, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (wx, wh, b) = (params[0].data(), params[1].data(), params[2].data());
    let mut h = vec![vec![T::zero(); n * u]];
    let mut cs = vec![vec![T::zero(); n * u]];
    let mut gates = Vec::with_capacity(steps);
    let mut xt = vec![T::zero(); n * f];
    for t in 0..steps {
        for i in 0..n {
            xt[i * f..(i + 1) * f].copy_from_slice(&x.data()[(i * steps + t) * f..(i * steps + t + 1) * f]);
        }
        let mut z: Vec<T> = (0..n * 4 * u).map(|i| b[i % (4 * u)]).collect();
        matmul_acc(&xt, wx, &mut z, n, f, 4 * u);
        matmul_acc(&h[t], wh, &mut z, n, u, 4 * u);
        let mut hn = vec![T::zero(); n * u];
        let mut cn = vec![T::zero(); n * u];
        for i in 0..n {
            let zr = &mut z[i * 4 * u..(i + 1) * 4 * u];
            for j in 0..u {
                let (ig, fg, gg, og) =
                    (sigmoid(zr[j]), sigmoid(zr[u + j]), zr[2 * u + j].tanh(), sigmoid(zr[3 * u + j]));
                zr[j] = ig;
                zr[u + j] = fg;
                zr[2 * u + j] = gg;
                zr[3 * u + j] = og;
                let cv = fg * cs[t][i * u + j] + ig * gg;
                cn[i * u + j] = cv;
                hn[i * u + j] = og * cv.tanh();
            }
        }
        gates.push(z);
        h.push(hn);
        cs.push(cn);
    }
    let out = Tensor::new(vec![n, u], h[steps].clone()).expect("lstm output shape");
    (out, LstmCache { x: x.clone(), h, cs, gates })
}

fn lstm_backward<T: Scalar>(
    lc: &LstmCache<T>,
    params: &[Tensor<T>],
    dy: &Tensor<T>,
    u: usize,
) -> (Tensor<T>, Vec<Tensor<T>>) {
    let (n, steps, f) = (lc.x.shape()[0], lc.x.shape()[1], lc.x.shape()[2]);
    let (wx, wh) = (params[0].data(), params[1].data());
    let mut dwx = Tensor::zeros(params[0].shape());
    let mut dwh = Tensor::zeros(params[1].shape());
    let mut db = Tensor::zeros(params[2].shape());
    let mut dx = Tensor::zeros(lc.x.shape());
    let mut dh = dy.data().to_vec();
    let mut dc = vec![T::zero(); n * u];
    let mut dz = vec![T::zero(); n * 4 * u];
    let mut xt = vec![T::zero(); n * f];
    for t in (0..steps).rev() {
        let g = &lc.gates[t];
        for i in 0..n {
            for j in 0..u {
                let k = i * u + j;
                let gi = i * 4 * u;
                let (ig, fg, gg, og) = (g[gi + j], g[gi + u + j], g[gi + 2 * u + j], g[gi + 3 * u + j]);
                let tc = lc.cs[t + 1][k].tanh();
                let dcv = dc[k] + dh[k] * og * (T::one() - tc * tc);
                dz[gi + j] = dcv * gg * ig * (T::one() - ig);
                dz[gi + u + j] = dcv * lc.cs[t][k] * fg * (T::one() - fg);
                dz[gi + 2 * u + j] = dcv * ig * (T::one() - gg * gg);
                dz[gi + 3 * u + j] = dh[k] * tc * og * (T::one() - og);
                dc[k] = dcv * fg;
            }
        }
        for i in 0..n {
            xt[i * f..(i + 1) * f].copy_from_slice(&lc.x.data()[(i * steps + t) * f..(i * steps + t + 1) * f]);
        }
        matmul_at_b(&xt, &dz, dwx.data_mut(), n, f, 4 * u);
        matmul_at_b(&lc.h[t], &dz, dwh.data_mut(), n, u, 4 * u);
        for row in dz.chunks(4 * u) {
            for (b, &v) in db.data_mut().iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        let mut dxt = vec![T::zero(); n * f];
        matmul_a_bt(&dz, wx, &mut dxt, n, f, 4 * u);
        for i in 0..n {
            dx.data_mut()[(i * steps + t) * f..(i * steps + t + 1) * f].copy_from_slice(&dxt[i * f..(i + 1) * f]);
        }
        let mut dhp = vec![T::zero(); n * u];
        matmul_a_bt(&dz, wh, &mut dhp, n, u, 4 * u);
        dh = dhp;
    }
    (dx, vec![dwx, dwh, db])
}

fn batchnorm_forward<T: Scalar>(x: &Tensor<T>, params: &[Tensor<T>], train: bool) -> (Tensor<T>, CacheKind<T>) {
    let ch = *x.shape().last().unwrap();
    let m = x.len() / ch;
    let (gamma, beta) = (params[0].data(), params[1].data());
    let (mean, var) = if train {
        let mut mean = vec![T::zero(); ch];
        for (i, &v) in x.data().iter().enumerate() {
            mean[i % ch] = mean[i % ch] + v;
        }
        mean.iter_mut().for_each(|v| *v = *v / c(m as f64));
        let mut var = vec![T::zero(); ch];
        for (i, &v) in x.data().iter().enumerate() {
            let d = v - mean[i % ch];
            var[i % ch] = var[i % ch] + d * d;
        }
        var.iter_mut().for_each(|v| *v = *v / c(m as f64));
        (mean, var)
    } else {
        (params[2].data().to_vec(), params[3].data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + c(BN_EPS)).sqrt()).collect();
    let xhat: Vec<T> = x.data().iter().enumerate().map(|(i, &v)| (v - mean[i % ch]) * inv_std[i % ch]).collect();
    let out = Tensor::from_fn(x.shape(), |i| gamma[i % ch] * xhat[i] + beta[i % ch]);
    let cache = if train { CacheKind::BatchNorm { xhat, inv_std, mean, var } } else { CacheKind::Input(x.clone()) };
    (out, cache)
}

fn batchnorm_backward<T: Scalar>(
    params: &[Tensor<T>],
    xhat: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> (Tensor<T>, Vec<Tensor<T>>) {
    let ch = inv_std.len();
    let m: T = c((dy.len() / ch) as f64);
    let gamma = params[0].data();
    let mut dgamma = vec![T::zero(); ch];
    let mut dbeta = vec![T::zero(); ch];
    for (i, &g) in dy.data().iter().enumerate() {
        dgamma[i % ch] = dgamma[i % ch] + g * xhat[i];
        dbeta[i % ch] = dbeta[i % ch] + g;
    }
    let dx = Tensor::from_fn(dy.shape(), |i| {
        let k = i % ch;
        let g = dy.data()[i] * gamma[k];
        if batch_stats {
            // d/dx of γ·x̂ with x̂ depending on the batch mean and variance.
            inv_std[k] / m * (m * g - dbeta[k] * gamma[k] - xhat[i] * dgamma[k] * gamma[k])
        } else {
            g * inv_std[k]
        }
    });
    let zeros = Tensor::zeros(&[ch]);
    (dx, vec![Tensor::new(vec![ch], dgamma).unwrap(), Tensor::new(vec![ch], dbeta).unwrap(), zeros.clone(), zeros])
}

/// Row-wise softmax of a `[n, k]` tensor.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.item_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

/// Mean categorical cross-entropy computed from logits, and its gradient
/// with respect to the logits, `(softmax − y) / n`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if logits.shape() != targets.shape() || logits.shape().len() != 2 {
        return Err(NnError::invalid(format!(
            "logits {:?} and targets {:?} must both be [n, classes]",
            logits.shape(),
            targets.shape()
        )));
    }
    let n: T = c(logits.batch() as f64);
    let k = logits.item_len();
    let p = softmax(logits);
    let mut loss = T::zero();
    for (row, yrow) in logits.data().chunks(k).zip(targets.data().chunks(k)) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = row.iter().fold(T::zero(), |s, &v| s + (v - mx).exp()).ln() + mx;
        for (&z, &y) in row.iter().zip(yrow) {
            if y != T::zero() {
                loss = loss - y * (z - lse);
            }
        }
    }
    let grad = Tensor::from_fn(p.shape(), |i| (p.data()[i] - targets.data()[i]) / n);
    Ok((loss / n, grad))
}
