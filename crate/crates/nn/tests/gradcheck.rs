mod support;

use std::collections::BTreeMap;

use ecog_core::rng;
use ecog_nn::{ArchParams, Family, Tensor};
use rand::Rng;
use support::gradcheck::{self, check_layer, check_stack, TOLERANCE};

#[test]
fn every_layer_matches_finite_differences_on_20_shapes() {
    let checks = gradcheck::suite(2024, 20);
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for c in &checks {
        let w = worst.entry(c.layer.clone()).or_default();
        *w = w.max(c.max_rel_error);
    }
    for (layer, err) in &worst {
        eprintln!("{layer:>14}: worst relative error {err:.2e}");
    }
    let failing: Vec<_> = checks.iter().filter(|c| c.max_rel_error > TOLERANCE).collect();
    assert!(failing.is_empty(), "{failing:#?}");
    assert_eq!(worst.len(), 8);
}

#[test]
fn batchnorm_eval_mode_matches_finite_differences() {
    let spec = ecog_nn::LayerSpec::BatchNorm;
    for seed in 0..5 {
        let c = check_layer(&spec, &[3, 2, 4], false, seed);
        assert!(c.max_rel_error <= TOLERANCE, "{c:?}");
    }
}

#[test]
fn dropout_train_mode_with_fixed_mask() {
    let spec = ecog_nn::LayerSpec::Dropout { rate: 0.4 };
    let c = check_layer(&spec, &[2, 5, 3], true, 7);
    assert!(c.max_rel_error <= TOLERANCE, "{c:?}");
}

fn random_stack(family: Family, seed: u64) {
    let arch =
        ArchParams { family, filters: 2, kernel: 3, dense_units: 4, lstm_units: 3, dropout: 0.3, batch_norm: false };
    let model = arch.build(&[8, 4, 1], 3, seed).unwrap();
    let mut r = rng::stream(seed, &[1]);
    let mut params = model.params_f64();
    for v in params.iter_mut().flatten().flat_map(|p| p.data_mut()) {
        *v += r.random_range(-0.2..0.2);
    }
    let x = Tensor::from_fn(&[3, 8, 4, 1], |_| r.random_range(-1.0..1.0));
    let y = Tensor::from_fn(&[3, 3], |i| if i % 3 == (i / 3) % 3 { 1.0 } else { 0.0 });
    let c = check_stack(model.layers(), &params, &x, &y);
    eprintln!("{family:?}: {:.2e} over {} parameters", c.max_rel_error, c.n_checked);
    assert!(c.max_rel_error <= TOLERANCE, "{c:?}");
}

#[test]
fn whole_cnn_matches_finite_differences() {
    random_stack(Family::Cnn, 11);
}

#[test]
fn whole_cnn_lstm_matches_finite_differences() {
    random_stack(Family::CnnLstm, 12);
}
