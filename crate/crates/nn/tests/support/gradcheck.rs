//! Central finite-difference oracle for layer and model gradients, run on
//! the `f64` mirror of the engine.

#![allow(dead_code)]

use ecog_core::rng;
use ecog_nn::layers::{self, softmax_cross_entropy, Ctx, LayerSpec, Padding};
use ecog_nn::model::loss_and_gradients;
use ecog_nn::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient pairs whose magnitudes are both below this are compared
/// absolutely (`|a − n| ≤ TOLERANCE · FLOOR`); relative error of two
/// numbers indistinguishable from zero is meaningless.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub layer: String,
    pub input_shape: Vec<usize>,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst element.
    pub worst_pair: (f64, f64),
    pub n_checked: usize,
}

#[derive(Default)]
struct Worst {
    err: f64,
    pair: (f64, f64),
    count: usize,
}

impl Worst {
    fn add(&mut self, a: f64, n: f64) {
        self.add_floored(a, n, FLOOR);
    }

    fn add_floored(&mut self, a: f64, n: f64, floor: f64) {
        let e = rel_error_floored(a, n, floor);
        if e > self.err || self.count == 0 {
            self.err = self.err.max(e);
            self.pair = (a, n);
        }
        self.count += 1;
    }

    fn finish(self, layer: &str, input_shape: &[usize]) -> Check {
        Check {
            layer: layer.into(),
            input_shape: input_shape.to_vec(),
            max_rel_error: self.err,
            worst_pair: self.pair,
            n_checked: self.count,
        }
    }
}

/// BatchNorm's input gradient sums to zero per channel, so cancellation
/// leaves entries far below the tensor's scale whose finite-difference
/// truncation error (O(h²), absolute) dominates; those are measured against
/// this fraction of the tensor's largest gradient instead.
pub const BATCHNORM_SCALE_FLOOR: f64 = 1e-2;

pub fn rel_error(a: f64, n: f64) -> f64 {
    rel_error_floored(a, n, FLOOR)
}

fn rel_error_floored(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn scale_floor(spec: &LayerSpec, grad: &[f64]) -> f64 {
    if *spec == LayerSpec::BatchNorm {
        let peak = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        FLOOR.max(BATCHNORM_SCALE_FLOOR * peak)
    } else {
        FLOOR
    }
}

fn central<F: FnMut(f64) -> f64>(mut f: F, at: f64) -> f64 {
    (f(at + STEP) - f(at - STEP)) / (2.0 * STEP)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values spaced ≥ 0.01 apart in random order, so no max-pool window or
/// ReLU input sits within a finite-difference step of a kink.
fn kink_free(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.02 + 0.005).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// `L = Σ forward(x) · proj`; compares dL/dx and dL/dθ with central
/// differences over every input and parameter element.
pub fn check_layer(spec: &LayerSpec, input_shape: &[usize], train: bool, seed: u64) -> Check {
    let mut r = rng::stream(seed, &[0x6C]);
    let item = &input_shape[1..];
    let mut params = spec.init_params::<f64>(item, &mut r);
    for (i, p) in params.iter_mut().enumerate() {
        let positive = *spec == LayerSpec::BatchNorm && i == 3;
        for v in p.data_mut() {
            *v = if positive { r.random_range(0.5..1.5) } else { r.random_range(-0.5..0.5) };
        }
    }
    let x = match spec {
        LayerSpec::MaxPool2D { .. } | LayerSpec::ReLU => kink_free(&mut r, input_shape),
        _ => uniform(&mut r, input_shape, -1.0, 1.0),
    };
    let mask_seed = r.random::<u64>();
    let run = |params: &[Tensor<f64>], x: &Tensor<f64>| {
        let mut mr = rng::stream(mask_seed, &[]);
        let mut ctx = Ctx { train, rng: Some(&mut mr) };
        layers::forward(spec, 0, params, x, &mut ctx).unwrap()
    };
    let (y, cache) = run(&params, &x);
    let proj = uniform(&mut r, y.shape(), -1.0, 1.0);
    let loss = |params: &[Tensor<f64>], x: &Tensor<f64>| {
        run(params, x).0.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let (dx, grads) = layers::backward(spec, &params, &cache, &proj).unwrap();
    let mut worst = Worst::default();
    let floor = scale_floor(spec, dx.data());
    for i in 0..x.len() {
        let n = central(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                loss(&params, &xp)
            },
            x.data()[i],
        );
        worst.add_floored(dx.data()[i], n, floor);
    }
    for p in 0..spec.trainable_count() {
        let floor = scale_floor(spec, grads[p].data());
        for i in 0..params[p].len() {
            let n = central(
                |v| {
                    let mut pp = params.clone();
                    pp[p].data_mut()[i] = v;
                    loss(&pp, &x)
                },
                params[p].data()[i],
            );
            worst.add_floored(grads[p].data()[i], n, floor);
        }
    }
    worst.finish(spec.name(), input_shape)
}

/// Mean cross-entropy of softmax(logits) against one-hot targets.
pub fn check_softmax_xent(batch: usize, classes: usize, seed: u64) -> Check {
    let mut r = rng::stream(seed, &[0x5F]);
    let z = uniform(&mut r, &[batch, classes], -3.0, 3.0);
    let y = Tensor::from_fn(&[batch, classes], |_| 0.0);
    let mut y = y;
    for b in 0..batch {
        let k = r.random_range(0..classes);
        y.data_mut()[b * classes + k] = 1.0;
    }
    let (_, g) = softmax_cross_entropy(&z, &y).unwrap();
    let mut worst = Worst::default();
    for i in 0..z.len() {
        let n = central(
            |v| {
                let mut zp = z.clone();
                zp.data_mut()[i] = v;
                softmax_cross_entropy(&zp, &y).unwrap().0
            },
            z.data()[i],
        );
        worst.add(g.data()[i], n);
    }
    worst.finish("Softmax+XEnt", &[batch, classes])
}

/// Whole stack through `loss_and_gradients`, eval mode.
pub fn check_stack(layers: &[LayerSpec], params: &[Vec<Tensor<f64>>], x: &Tensor<f64>, y: &Tensor<f64>) -> Check {
    let loss = |p: &[Vec<Tensor<f64>>]| loss_and_gradients(layers, p, x, y, &mut Ctx::eval()).unwrap().loss;
    let pass = loss_and_gradients(layers, params, x, y, &mut Ctx::eval()).unwrap();
    let mut worst = Worst::default();
    for (l, spec) in layers.iter().enumerate() {
        for p in 0..spec.trainable_count() {
            for i in 0..params[l][p].len() {
                let n = central(
                    |v| {
                        let mut pp = params.to_vec();
                        pp[l][p].data_mut()[i] = v;
                        loss(&pp)
                    },
                    params[l][p].data()[i],
                );
                worst.add(pass.grads[l][p].data()[i], n);
            }
        }
    }
    worst.finish("stack", x.shape())
}

/// One random small configuration of the named layer kind.
pub fn random_case(kind: &str, r: &mut ChaCha8Rng) -> (LayerSpec, Vec<usize>, bool) {
    let n = r.random_range(1..=2);
    match kind {
        "Conv2D" => {
            let (h, w, c) = (r.random_range(3..=7), r.random_range(3..=6), r.random_range(1..=3));
            let spec = LayerSpec::Conv2D {
                filters: r.random_range(1..=3),
                kernel_h: r.random_range(1..=3),
                kernel_w: r.random_range(1..=3),
                stride: r.random_range(1..=2),
                padding: if r.random_bool(0.5) { Padding::Same } else { Padding::Valid },
            };
            (spec, vec![n, h, w, c], false)
        }
        "MaxPool2D" => {
            let (h, w, c) = (r.random_range(2..=6), r.random_range(2..=6), r.random_range(1..=3));
            let spec =
                LayerSpec::MaxPool2D { pool_h: r.random_range(1..=h.min(3)), pool_w: r.random_range(1..=w.min(3)) };
            (spec, vec![n, h, w, c], false)
        }
        "Dense" => (
            LayerSpec::Dense { units: r.random_range(1..=5) },
            vec![r.random_range(1..=3), r.random_range(1..=6)],
            false,
        ),
        "LSTM" => (
            LayerSpec::LSTM { units: r.random_range(1..=3) },
            vec![n, r.random_range(1..=4), r.random_range(1..=4)],
            false,
        ),
        "Dropout" => (
            LayerSpec::Dropout { rate: r.random_range(0.0..0.9) },
            vec![n, r.random_range(1..=5), r.random_range(1..=4)],
            false,
        ),
        "ReLU" => (LayerSpec::ReLU, vec![n, r.random_range(1..=5), r.random_range(1..=4)], false),
        "BatchNorm" => {
            (LayerSpec::BatchNorm, vec![r.random_range(2..=4), r.random_range(1..=3), r.random_range(1..=3)], true)
        }
        other => panic!("no random case for {other}"),
    }
}

pub const LAYER_KINDS: [&str; 7] = ["Conv2D", "MaxPool2D", "Dense", "LSTM", "Dropout", "ReLU", "BatchNorm"];

/// `cases` random shapes for every layer kind plus Softmax+XEnt.
pub fn suite(seed: u64, cases: usize) -> Vec<Check> {
    let mut out = Vec::new();
    for (k, kind) in LAYER_KINDS.iter().enumerate() {
        let mut r = rng::stream(seed, &[k as u64]);
        for case in 0..cases {
            let (spec, shape, train) = random_case(kind, &mut r);
            out.push(check_layer(&spec, &shape, train, rng::derive(seed, &[k as u64, case as u64])));
        }
    }
    let mut r = rng::stream(seed, &[0x5F]);
    for case in 0..cases {
        out.push(check_softmax_xent(
            r.random_range(1..=4),
            r.random_range(2..=5),
            rng::derive(seed, &[99, case as u64]),
        ));
    }
    out
}
