use braintorrent::model::{adam_step, AdamConfig, Batch, ModelSpec, ModelWeights, OptimizerState};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_and_batch() -> impl Strategy<Value = (ModelSpec, u64, Vec<f64>, Vec<usize>)> {
    (1usize..4, prop::collection::vec(1usize..5, 0..3), 2usize..4, any::<u64>(), 1usize..5).prop_flat_map(
        |(input, hidden, classes, seed, rows)| {
            (
                Just(ModelSpec::new(input, hidden, classes)),
                Just(seed),
                prop::collection::vec(-1.0f64..1.0, rows * input),
                prop::collection::vec(0..classes, rows),
            )
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences((spec, seed, xs, labels) in model_and_batch()) {
        // biases start at exactly zero; move every parameter off the ReLU kinks
        let mut w = spec.init(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        w.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
        let x = Array2::from_shape_vec((labels.len(), spec.input_dim), xs).unwrap();
        let batch = Batch::new(x, labels).unwrap();
        let (_, grad) = spec.loss_and_grad(&w, &batch).unwrap();
        let h = 1e-5;
        let mut bad = 0;
        #[allow(clippy::needless_range_loop)]
        for k in 0..w.len() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.params[k] += h;
            minus.params[k] -= h;
            let numeric = (spec.loss_and_grad(&plus, &batch).unwrap().0 - spec.loss_and_grad(&minus, &batch).unwrap().0) / (2.0 * h);
            let scale = grad[k].abs().max(numeric.abs()).max(1e-7);
            if (grad[k] - numeric).abs() / scale >= 1e-4 {
                bad += 1;
            }
        }
        // a finite difference may straddle a ReLU kink
        prop_assert!(bad <= 1 + w.len() / 100);
    }

    #[test]
    fn adam_descends_a_quadratic(target in prop::collection::vec(-3.0f64..3.0, 1..6)) {
        let cfg = AdamConfig::default();
        let mut w = ModelWeights { spec_fingerprint: 0, params: vec![0.0; target.len()] };
        let mut st = OptimizerState::new(w.len());
        let dist = |w: &ModelWeights| w.params.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let start = dist(&w);
        for _ in 0..2000 {
            let grad: Vec<f64> = w.params.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            (w, st) = adam_step(&w, &grad, &st, 0.05, &cfg).unwrap();
        }
        prop_assert!(dist(&w) < 1e-3 * (1.0 + start));
    }
}
