use bgcf_core::baseline::{
    f_ml, listwise_covariance, ml_fit, regression_from_cov, MlFit, OptConfig,
};
use bgcf_core::datagen::{build_paper_model, generate, paper_structure, MarginDesign, Missingness};
use bgcf_core::model::MeasurementStructure;
use bgcf_core::rng::rng_from_seed;
use nalgebra::{DMatrix, DVector};

fn fit_value(fit: &MlFit, s: &DMatrix<f64>, structure: &MeasurementStructure) -> f64 {
    f_ml(
        s,
        fit.params.c(),
        &fit.raw_loadings,
        &fit.raw_residuals,
        structure,
    )
    .unwrap()
}

#[test]
fn gaussian_data_loadings_near_truth() {
    let structure = paper_structure();
    let truth = build_paper_model(4);
    let margins = MarginDesign::Gaussian.margins(&structure);
    let mut rng = rng_from_seed(31);
    let gen = generate(
        &truth,
        &structure,
        1000,
        &margins,
        Missingness::None,
        &mut rng,
    )
    .unwrap();
    let (cov, _, n) = listwise_covariance(&gen.data).unwrap();
    assert_eq!(n, 1000);
    let fit = ml_fit(&cov, n, &structure, &OptConfig::default()).unwrap();
    assert!(fit.converged, "gradient norm {}", fit.gradient_norm);
    assert!(fit.f_ml <= fit.f_ml_initial);
    assert!(fit.f_ml >= 0.0);
    assert!((fit_value(&fit, &cov, &structure) - fit.f_ml).abs() < 1e-9);
    for l in fit.params.loadings(&structure) {
        assert!((l - 0.7).abs() < 0.05, "loading {l}");
    }
    assert!(fit.heywood.is_empty());
}

#[test]
fn implied_covariance_reproduces_population_regression() {
    let structure = paper_structure();
    let truth = build_paper_model(6);
    let s = truth.implied_response_cov();
    let fit = ml_fit(&s, 500, &structure, &OptConfig::default()).unwrap();
    let implied = fit.implied_cov(&structure);
    let means = DVector::zeros(structure.p());
    for j in [0, 3, 7] {
        let (b0_fit, b_fit) = regression_from_cov(&implied, &means, j).unwrap();
        let (b0, b) = regression_from_cov(&s, &means, j).unwrap();
        assert!((b0_fit - b0).abs() < 1e-6);
        assert!((b_fit - b).abs().max() < 1e-6);
    }
}

#[test]
fn listwise_deletion_uses_complete_rows_only() {
    let structure = paper_structure();
    let truth = build_paper_model(7);
    let margins = MarginDesign::Gaussian.margins(&structure);
    let mut rng = rng_from_seed(8);
    let gen = generate(
        &truth,
        &structure,
        400,
        &margins,
        Missingness::Mcar(0.05),
        &mut rng,
    )
    .unwrap();
    let (_, _, n) = listwise_covariance(&gen.data).unwrap();
    assert_eq!(n, gen.data.complete_rows().len());
    assert!(n < 400);
}
