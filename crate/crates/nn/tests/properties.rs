use ecog_nn::layers::{backward, forward, softmax, softmax_cross_entropy, Ctx, LayerSpec};
use ecog_nn::Tensor;
use proptest::prelude::*;

fn rows(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(n, k)| {
        prop::collection::vec(-50.0f64..50.0, n * k).prop_map(move |v| Tensor::new(vec![n, k], v).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in rows(6, 5)) {
        let p = softmax(&x.cast::<f32>());
        for row in p.data().chunks(x.shape()[1]) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(x in rows(6, 4), seed in 0usize..1000) {
        let (n, k) = (x.shape()[0], x.shape()[1]);
        let y = Tensor::from_fn(&[n, k], |i| if i % k == (seed + i / k) % k { 1.0 } else { 0.0 });
        let (loss, _) = softmax_cross_entropy(&x, &y).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn cross_entropy_zero_only_when_perfect(k in 2usize..5, target in 0usize..5, margin in 0.0f64..20.0) {
        let target = target % k;
        let z = Tensor::from_fn(&[1, k], |i| if i == target { margin } else { 0.0 });
        let y = Tensor::from_fn(&[1, k], |i| if i == target { 1.0 } else { 0.0 });
        let (loss, _) = softmax_cross_entropy(&z, &y).unwrap();
        prop_assert!(loss > 0.0);
        let perfect = Tensor::from_fn(&[1, k], |i| if i == target { 1e4 } else { 0.0 });
        prop_assert_eq!(softmax_cross_entropy(&perfect, &y).unwrap().0, 0.0);
    }

    #[test]
    fn maxpool_routes_each_gradient_to_one_argmax(
        (h, w, c, ph, pw) in (2usize..7, 2usize..7, 1usize..3).prop_flat_map(|(h, w, c)| (Just(h), Just(w), Just(c), 1..=h, 1..=w)),
        seed in any::<u64>(),
    ) {
        let spec = LayerSpec::MaxPool2D { pool_h: ph, pool_w: pw };
        let n = h * w * c;
        let x = Tensor::from_fn(&[1, h, w, c], |i| ((i as u64).wrapping_mul(seed | 1) % 1009) as f64);
        let (y, cache) = forward(&spec, 0, &[], &x, &mut Ctx::eval()).unwrap();
        let dy = Tensor::from_fn(y.shape(), |i| (i + 1) as f64);
        let (dx, _) = backward(&spec, &[], &cache, &dy).unwrap();
        prop_assert_eq!(dx.len(), n);
        let nonzero: Vec<f64> = dx.data().iter().copied().filter(|&v| v != 0.0).collect();
        prop_assert_eq!(nonzero.len(), y.len());
        let mut got = nonzero.clone();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = dy.data().to_vec();
        want.sort_by(f64::total_cmp);
        prop_assert_eq!(got, want);
        for (i, &g) in dx.data().iter().enumerate() {
            if g != 0.0 {
                let o = g as usize - 1;
                prop_assert_eq!(x.data()[i], y.data()[o]);
            }
        }
    }
}
