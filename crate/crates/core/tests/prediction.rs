use bgcf_core::datagen::{build_paper_model, generate, paper_structure, MarginDesign, Missingness};
use bgcf_core::gibbs::{ChainConfig, PriorSpec};
use bgcf_core::predict::{train, TrainedPredictor};
use bgcf_core::rng::rng_from_seed;
use bgcf_core::MixedDataset;
use nalgebra::DMatrix;
use rand::Rng;

fn training_data(n: usize, seed: u64) -> MixedDataset {
    let structure = paper_structure();
    let truth = build_paper_model(5);
    let margins = MarginDesign::Mixed {
        df: 4.0,
        categories: 5,
    }
    .margins(&structure);
    let mut rng = rng_from_seed(seed);
    generate(&truth, &structure, n, &margins, Missingness::None, &mut rng)
        .unwrap()
        .data
}

/// Three columns, positively correlated, with nonnegative regression weights
/// for column 0 on the other two.
fn constructed_model(n: usize) -> TrainedPredictor {
    let mut rng = rng_from_seed(40);
    let values = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() * 10.0);
    let data = MixedDataset::continuous(vec!["a".into(), "b".into(), "c".into()], values).unwrap();
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.4, 0.5, 1.0, 0.3, 0.4, 0.3, 1.0]);
    TrainedPredictor::from_parts(s, &data).unwrap()
}

#[test]
fn predictions_stay_within_training_range() {
    let structure = paper_structure();
    let data = training_data(200, 1);
    let config = ChainConfig {
        iterations: 150,
        burn_in: 20,
        thinning: 1,
        seed: 3,
    };
    let model = train(
        &data,
        &structure,
        &PriorSpec::default_for(&structure),
        &config,
    )
    .unwrap();
    let mut rng = rng_from_seed(77);
    for j in [0, 5] {
        let (lo, hi) = (model.margin(j).min(), model.margin(j).max());
        let cond = model.conditional(j).unwrap();
        for _ in 0..50 {
            // Include values far outside the training support.
            let row: Vec<Option<f64>> = (0..structure.p())
                .map(|k| {
                    let m = model.margin(k);
                    let span = m.max() - m.min();
                    Some(m.min() - span + rng.random::<f64>() * 3.0 * span)
                })
                .collect();
            let pred = model.predict_with(&cond, &row, 20, &mut rng).unwrap();
            assert!(pred.value >= lo && pred.value <= hi);
        }
    }
}

#[test]
fn prediction_monotone_in_each_predictor() {
    let model = constructed_model(300);
    let cond = model.conditional(0).unwrap();
    assert!(cond.weights.iter().all(|&w| w >= 0.0));
    for k in [1, 2] {
        let mut previous = f64::NEG_INFINITY;
        for step in 0..=20 {
            let mut row = vec![None, Some(5.0), Some(5.0)];
            row[k] = Some(step as f64 * 0.5);
            // Common random numbers across the sweep isolate the effect of the
            // predictor.
            let mut rng = rng_from_seed(9);
            let v = model
                .predict_with(&cond, &row, 500, &mut rng)
                .unwrap()
                .value;
            assert!(v >= previous, "not monotone in predictor {k}");
            previous = v;
        }
    }
}

#[test]
fn seeds_agree_within_monte_carlo_error() {
    let model = constructed_model(400);
    let cond = model.conditional(0).unwrap();
    let row = vec![None, Some(7.0), Some(2.5)];
    let m = 10_000;
    // Draw-level spread of F^-1(Phi(z)), z ~ N(mu, sd^2), for the standard error.
    let mut rng = rng_from_seed(1);
    let singles: Vec<f64> = (0..2000)
        .map(|_| model.predict_with(&cond, &row, 1, &mut rng).unwrap().value)
        .collect();
    let mean = singles.iter().sum::<f64>() / singles.len() as f64;
    let var = singles.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (singles.len() - 1) as f64;
    let se = (var / m as f64).sqrt();
    let a = model
        .predict_with(&cond, &row, m, &mut rng_from_seed(100))
        .unwrap()
        .value;
    let b = model
        .predict_with(&cond, &row, m, &mut rng_from_seed(200))
        .unwrap()
        .value;
    assert!(a != b);
    assert!((a - b).abs() < 3.0 * std::f64::consts::SQRT_2 * se);
}

#[test]
fn out_of_range_predictor_is_reported() {
    let model = constructed_model(100);
    let cond = model.conditional(0).unwrap();
    let pred = model
        .predict_with(
            &cond,
            &[None, Some(-50.0), Some(5.0)],
            10,
            &mut rng_from_seed(0),
        )
        .unwrap();
    assert_eq!(pred.clamped, vec![1]);
}
