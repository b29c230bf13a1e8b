use gamorra_core::mlr::{FitMeta, Scaler};
use gamorra_core::{predict_batch, predict_frame, sliding_rmse, ExplanatoryVector, ModelWeights};
use proptest::prelude::*;

fn weights(beta: Vec<f64>) -> ModelWeights {
    let dim = beta.len();
    ModelWeights::new(beta, Scaler::identity(dim), FitMeta::default()).unwrap()
}

fn vector(dim: usize) -> impl Strategy<Value = ExplanatoryVector> {
    prop::collection::vec(0.0f64..50.0, dim - 1).prop_map(|mut v| {
        v.insert(0, 1.0);
        ExplanatoryVector::from_slice(&v).unwrap()
    })
}

proptest! {
    #[test]
    fn batch_is_scalar_dot(beta in prop::collection::vec(-5.0f64..5.0, 10), w in vector(10)) {
        let oracle: f64 = beta.iter().enumerate().map(|(i, b)| b * w.get(i)).sum();
        let got = predict_batch(&weights(beta), &w).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn frame_is_sum_of_batches(beta in prop::collection::vec(0.0f64..5.0, 11),
                               batches in prop::collection::vec(vector(11), 0..30)) {
        let w = weights(beta);
        let each: f64 = batches.iter().map(|b| predict_batch(&w, b).unwrap()).sum();
        let got = predict_frame(&w, &batches).unwrap();
        prop_assert!((got - each).abs() <= 1e-9 * each.max(1.0));
    }

    #[test]
    fn rmse_matches_formula(window in prop::collection::vec((0.0f64..40.0, 0.0f64..40.0), 1..=10)) {
        let n = window.len() as f64;
        let oracle = (window.iter().map(|(e, a)| (e - a) * (e - a)).sum::<f64>() / n).sqrt();
        prop_assert!((sliding_rmse(&window).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn three_identical_batches() {
    let w = weights(vec![2.0, 0.0]);
    let b = ExplanatoryVector::unit(2);
    assert_eq!(predict_frame(&w, &[b, b, b]).unwrap(), 6.0);
    assert_eq!(predict_frame(&w, &[]).unwrap(), 0.0);
    assert_eq!(sliding_rmse(&[(10.0, 9.0)]).unwrap(), 1.0);
}
