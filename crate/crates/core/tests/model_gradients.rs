mod common;

use proptest::prelude::*;
use robust_domains::models::{
    parse_checkpoint, render_checkpoint, weighted_gradient, Example, LossOracle, MlpModel, ModelFamily, ModelSpec,
    SoftmaxModel,
};
use robust_domains::Error;

use common::{central_difference, relative_error};

struct Batch {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Batch {
    fn random(rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize, c: usize) -> Self {
        let features = (0..n)
            .map(|_| (0..d).map(|_| 2.0 * common::normal(rng)).collect())
            .collect();
        let labels = (0..n).map(|i| i % c).collect();
        Self { features, labels }
    }

    fn examples(&self) -> Vec<Example<'_>> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, &label)| Example { features: x, label })
            .collect()
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over every coordinate.
fn gradient_error(model: &dyn LossOracle, values: Vec<f64>, batch: &[Example<'_>]) -> f64 {
    let params = model.init_params(0).with_values(values.clone());
    let (_, grad) = model.loss_gradient(&params, batch).unwrap();
    let mut worst = 0.0f64;
    for i in 0..values.len() {
        let numeric = central_difference(values[i], |x| {
            let mut moved = values.clone();
            moved[i] = x;
            model.mean_loss(&params.with_values(moved), batch).unwrap()
        });
        worst = worst.max(relative_error(numeric, grad[i]));
    }
    worst
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = common::rng(1);
    for point in 0..20 {
        let (d, c) = (2 + point % 4, 2 + point % 3);
        let model = SoftmaxModel::new(d, c).unwrap();
        let batch = Batch::random(&mut rng, 7, d, c);
        let values: Vec<f64> = (0..model.layout().total_len())
            .map(|_| common::normal(&mut rng))
            .collect();
        let error = gradient_error(&model, values, &batch.examples());
        assert!(error <= 1e-6, "point {point}: {error:e}");
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = common::rng(2);
    for point in 0..20 {
        let (d, h, c) = (2 + point % 3, 1 + point % 5, 2 + point % 3);
        let model = MlpModel::new(d, h, c).unwrap();
        let batch = Batch::random(&mut rng, 6, d, c);
        let values: Vec<f64> = (0..model.layout().total_len())
            .map(|_| common::normal(&mut rng))
            .collect();
        let error = gradient_error(&model, values, &batch.examples());
        assert!(error <= 1e-5, "point {point}: {error:e}");
    }
}

#[test]
fn zero_parameters_give_log_classes() {
    let mut rng = common::rng(3);
    let batch = Batch::random(&mut rng, 5, 3, 4);
    let softmax = SoftmaxModel::new(3, 4).unwrap();
    let mlp = MlpModel::new(3, 6, 4).unwrap();
    for model in [&softmax as &dyn LossOracle, &mlp] {
        let zeros = model.init_params(0).with_values(vec![0.0; model.layout().total_len()]);
        let loss = model.mean_loss(&zeros, &batch.examples()).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }
    assert_eq!(softmax.init_params(9).values, vec![0.0; softmax.layout().total_len()]);
}

#[test]
fn duplicated_examples_keep_the_mean() {
    let mut rng = common::rng(4);
    let model = SoftmaxModel::new(3, 3).unwrap();
    let params = model
        .init_params(0)
        .with_values((0..12).map(|_| common::normal(&mut rng)).collect());
    let batch = Batch::random(&mut rng, 1, 3, 3);
    let once = batch.examples();
    let twice = [once[0], once[0]];
    let (a, ga) = model.loss_gradient(&params, &once).unwrap();
    let (b, gb) = model.loss_gradient(&params, &twice).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn invalid_models_and_labels() {
    assert!(matches!(MlpModel::new(3, 0, 2), Err(Error::Config(_))));
    assert!(matches!("mlp:0".parse::<ModelFamily>(), Err(Error::Config(_))));
    let model = SoftmaxModel::new(2, 2).unwrap();
    let x = [1.0, 2.0];
    let bad = [Example { features: &x, label: 2 }];
    assert!(matches!(
        model.loss_gradient(&model.init_params(0), &bad),
        Err(Error::InvalidInput(_))
    ));
    let short = [Example {
        features: &x[..1],
        label: 0,
    }];
    assert!(model.loss_gradient(&model.init_params(0), &short).is_err());
}

#[test]
fn mlp_init_is_seeded_and_scaled() {
    let model = MlpModel::new(4, 5, 3).unwrap();
    let a = model.init_params(7);
    assert_eq!(a.values, model.init_params(7).values);
    assert_ne!(a.values, model.init_params(8).values);
    assert!(a.block("hidden.weights").iter().all(|w| w.abs() <= 0.5));
    assert!(a.block("output.weights").iter().all(|w| w.abs() <= 1.0 / 5f64.sqrt()));
}

#[test]
fn weighted_gradient_examples() {
    let g = vec![vec![1.0, -2.0], vec![1.0, -2.0], vec![1.0, -2.0]];
    assert_eq!(weighted_gradient(&[1.0 / 3.0; 3], &g).unwrap(), vec![1.0, -2.0]);
    let h = vec![vec![1.0, 2.0], vec![3.0, 5.0]];
    assert_eq!(weighted_gradient(&[0.0, 1.0], &h).unwrap(), vec![3.0, 5.0]);
    assert!(weighted_gradient(&[1.0], &h).is_err());

    let mut rng = common::rng(5);
    for _ in 0..50 {
        let k = 1 + rand::Rng::random_range(&mut rng, 0..5usize);
        let p = common::random_simplex(&mut rng, k);
        let grads: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..6).map(|_| common::normal(&mut rng)).collect())
            .collect();
        let mut naive = vec![0.0; 6];
        for (w, g) in p.iter().zip(&grads) {
            for (acc, x) in naive.iter_mut().zip(g) {
                *acc += w * x;
            }
        }
        let fast = weighted_gradient(&p, &grads).unwrap();
        assert!(common::linf(&fast, &naive) <= 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_are_non_negative(seed in any::<u64>(), scale in 0.1..50.0f64, hidden in 0..4usize) {
        let mut rng = common::rng(seed);
        let model: Box<dyn LossOracle> = if hidden == 0 {
            Box::new(SoftmaxModel::new(3, 3).unwrap())
        } else {
            Box::new(MlpModel::new(3, hidden, 3).unwrap())
        };
        let values = (0..model.layout().total_len()).map(|_| scale * common::normal(&mut rng)).collect();
        let params = model.init_params(0).with_values(values);
        let batch = Batch::random(&mut rng, 4, 3, 3);
        for example in batch.examples() {
            let loss = model.loss(&params, example).unwrap();
            prop_assert!(loss >= 0.0 && loss.is_finite());
        }
    }

    #[test]
    fn softmax_loss_is_convex_on_segments(seed in any::<u64>(), t in 0.0..1.0f64) {
        let mut rng = common::rng(seed);
        let model = SoftmaxModel::new(3, 3).unwrap();
        let batch = Batch::random(&mut rng, 5, 3, 3);
        let a: Vec<f64> = (0..12).map(|_| 3.0 * common::normal(&mut rng)).collect();
        let b: Vec<f64> = (0..12).map(|_| 3.0 * common::normal(&mut rng)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let base = model.init_params(0);
        let loss = |v: Vec<f64>| model.mean_loss(&base.with_values(v), &batch.examples()).unwrap();
        prop_assert!(loss(mid) <= t * loss(a) + (1.0 - t) * loss(b) + 1e-8);
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), hidden in 0..5usize, extreme in any::<f64>()) {
        prop_assume!(extreme.is_finite());
        let spec = if hidden == 0 {
            ModelSpec::Softmax { input_dim: 3, num_classes: 2 }
        } else {
            ModelSpec::Mlp { input_dim: 3, hidden, num_classes: 2 }
        };
        let model = spec.build().unwrap();
        let mut rng = common::rng(seed);
        let mut values: Vec<f64> = (0..model.layout().total_len()).map(|_| common::normal(&mut rng)).collect();
        values[0] = extreme;
        values[1] = f64::MIN_POSITIVE / 3.0;
        let params = model.init_params(0).with_values(values);
        let (spec_back, params_back) = parse_checkpoint(&render_checkpoint(&spec, &params)).unwrap();
        prop_assert_eq!(spec_back, spec);
        prop_assert_eq!(params_back.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        params.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(params_back.layout, params.layout);
    }
}
