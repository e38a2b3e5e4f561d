//! Accuracy metrics, the simulation study runner and repeated k-fold
//! cross-validation of the two regression methods.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::baseline::{listwise_covariance, ml_fit, regression_from_cov, OptConfig};
use crate::data::MixedDataset;
use crate::datagen::{build_paper_model, generate, paper_structure, MarginDesign, Missingness};
use crate::error::{BgcfError, Result};
use crate::gibbs::{run_chain, ChainConfig, PriorSpec};
use crate::model::{FactorModelParams, MeasurementStructure};
use crate::predict::{TrainedPredictor, DEFAULT_M_DRAWS};
use crate::rng::{derive_seed, rng_from_seed};

/// `mean((est - truth) / truth)`.
pub fn arb(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths)?;
    if truths.contains(&0.0) {
        return Err(BgcfError::InvalidInput(
            "relative bias needs non-zero truths".into(),
        ));
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t) / t)
        .sum::<f64>()
        / truths.len() as f64)
}

pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    Ok(mse(estimates, truths)?.sqrt())
}

pub fn mse(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair(predictions, actuals)?;
    Ok(predictions
        .iter()
        .zip(actuals)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / actuals.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(BgcfError::InvalidInput(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(BgcfError::InvalidInput("empty input".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasClass {
    Trivial,
    Moderate,
    Substantial,
}

/// Below 5% trivial, below 10% moderate, otherwise substantial.
pub fn classify_bias(arb: f64) -> BiasClass {
    let a = arb.abs();
    if a < 0.05 {
        BiasClass::Trivial
    } else if a < 0.10 {
        BiasClass::Moderate
    } else {
        BiasClass::Substantial
    }
}

/// Mean and the half-width `1.96 * sd / sqrt(r)` of its normal-approximation
/// 95% interval (zero for a single value).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let (mean, se) = mean_se(values);
    (mean, 1.96 * se)
}

/// Mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

/// One-sample Kolmogorov-Smirnov test against Uniform(lo, hi). Returns the
/// statistic and its asymptotic p-value.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut x: Vec<f64> = samples
        .iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Bgcf,
    Ml,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Bgcf => "BGCF",
            Estimator::Ml => "ML",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = BgcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BGCF" => Ok(Estimator::Bgcf),
            "ML" | "MLR" => Ok(Estimator::Ml),
            _ => Err(BgcfError::InvalidInput(format!("unknown estimator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingKind {
    Mar,
    Mcar,
}

impl MissingKind {
    fn with_rate(self, beta: f64) -> Missingness {
        if beta == 0.0 {
            return Missingness::None;
        }
        match self {
            MissingKind::Mar => Missingness::Mar(beta),
            MissingKind::Mcar => Missingness::Mcar(beta),
        }
    }
}

/// A grid of simulation cells on the correlated four-factor population.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub estimators: Vec<Estimator>,
    pub sample_sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub margins: Vec<MarginDesign>,
    pub missing: MissingKind,
    pub replicates: usize,
    pub seed: u64,
    /// Seed of the population interfactor correlations.
    pub model_seed: u64,
    pub chain: ChainConfig,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| {
            Err(BgcfError::InvalidInput(format!(
                "suite config: no {what} given"
            )))
        };
        if self.estimators.is_empty() {
            return empty("estimators");
        }
        if self.sample_sizes.is_empty() {
            return empty("sample sizes");
        }
        if self.betas.is_empty() {
            return empty("missing rates");
        }
        if self.margins.is_empty() {
            return empty("margins");
        }
        if self.replicates == 0 {
            return Err(BgcfError::InvalidInput(
                "suite config: replicates must be positive".into(),
            ));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return Err(BgcfError::InvalidInput(format!(
                "suite config: sample size {n} too small"
            )));
        }
        for &b in &self.betas {
            let ok = match self.missing {
                MissingKind::Mar => (0.0..=0.5).contains(&b),
                MissingKind::Mcar => (0.0..1.0).contains(&b),
            };
            if !ok {
                return Err(BgcfError::InvalidInput(format!(
                    "suite config: missing rate {b} out of range"
                )));
            }
        }
        for m in &self.margins {
            m.validate()?;
        }
        self.chain.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Correlations,
    Loadings,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Correlations => "correlations",
            Target::Loadings => "loadings",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Arb,
    Rmse,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Arb => "ARB",
            Metric::Rmse => "RMSE",
        })
    }
}

/// Coordinates of one simulation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub estimator: Estimator,
    pub n: usize,
    pub beta: f64,
    pub margin: MarginDesign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub cell: Cell,
    pub replicate: usize,
    pub target: Target,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub cell: Cell,
    pub target: Target,
    pub metric: Metric,
    pub mean: f64,
    pub ci_half_width: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub cell: Cell,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResults {
    pub truth: FactorModelParams,
    pub summary: Vec<SummaryRecord>,
    pub raw: Vec<RawRecord>,
    pub failures: Vec<FailureRecord>,
}

impl SuiteResults {
    pub fn get(
        &self,
        estimator: Estimator,
        n: usize,
        beta: f64,
        margin: MarginDesign,
        target: Target,
        metric: Metric,
    ) -> Option<&SummaryRecord> {
        self.summary.iter().find(|r| {
            r.cell.estimator == estimator
                && r.cell.n == n
                && r.cell.beta == beta
                && r.cell.margin == margin
                && r.target == target
                && r.metric == metric
        })
    }
}

/// Seed of the data of one replicate. Missing rate, margin and estimator are
/// deliberately excluded so cells differing only in those share their latent
/// draws.
pub fn replicate_seed(suite_seed: u64, n: usize, replicate: usize) -> u64 {
    derive_seed(suite_seed, &[n as u64, replicate as u64])
}

/// Scores one estimate against the truth.
pub fn score(
    estimate: &FactorModelParams,
    truth: &FactorModelParams,
    structure: &MeasurementStructure,
) -> Result<Vec<(Target, Metric, f64)>> {
    let mut out = Vec::with_capacity(4);
    let est_c = estimate.factor_correlations();
    let true_c = truth.factor_correlations();
    if !true_c.is_empty() {
        out.push((Target::Correlations, Metric::Arb, arb(&est_c, &true_c)?));
        out.push((Target::Correlations, Metric::Rmse, rmse(&est_c, &true_c)?));
    }
    let est_l = estimate.loadings(structure);
    let true_l = truth.loadings(structure);
    out.push((Target::Loadings, Metric::Arb, arb(&est_l, &true_l)?));
    out.push((Target::Loadings, Metric::Rmse, rmse(&est_l, &true_l)?));
    Ok(out)
}

/// Fits one estimator to one dataset.
pub fn fit_estimator(
    estimator: Estimator,
    data: &MixedDataset,
    structure: &MeasurementStructure,
    chain: &ChainConfig,
) -> Result<FactorModelParams> {
    match estimator {
        Estimator::Bgcf => {
            Ok(run_chain(data, structure, &PriorSpec::default_for(structure), chain)?.params_hat)
        }
        Estimator::Ml => {
            let (cov, _, n) = listwise_covariance(data)?;
            Ok(ml_fit(&cov, n, structure, &OptConfig::default())?.params)
        }
    }
}

/// Runs every cell of the grid. Replicates are independent tasks executed on
/// the current rayon pool; results do not depend on the pool size.
pub fn run_simulation_suite(config: &SuiteConfig) -> Result<SuiteResults> {
    config.validate()?;
    let structure = paper_structure();
    let truth = build_paper_model(config.model_seed);

    let mut tasks = Vec::new();
    for &n in &config.sample_sizes {
        for &beta in &config.betas {
            for &margin in &config.margins {
                for replicate in 0..config.replicates {
                    tasks.push((n, beta, margin, replicate));
                }
            }
        }
    }

    type TaskOut = (Vec<RawRecord>, Vec<FailureRecord>);
    let outputs: Vec<TaskOut> = tasks
        .par_iter()
        .map(|&(n, beta, margin, replicate)| {
            let data_seed = replicate_seed(config.seed, n, replicate);
            let mut raw = Vec::new();
            let mut failures = Vec::new();
            let cell_of = |estimator| Cell {
                estimator,
                n,
                beta,
                margin,
            };
            let mut rng = rng_from_seed(data_seed);
            let generated = generate(
                &truth,
                &structure,
                n,
                &margin.margins(&structure),
                config.missing.with_rate(beta),
                &mut rng,
            );
            let data = match generated {
                Ok(g) => g.data,
                Err(e) => {
                    for &est in &config.estimators {
                        failures.push(FailureRecord {
                            cell: cell_of(est),
                            replicate,
                            message: format!("data generation: {e}"),
                        });
                    }
                    return (raw, failures);
                }
            };
            let chain = ChainConfig {
                seed: derive_seed(data_seed, &[1]),
                ..config.chain
            };
            for &est in &config.estimators {
                match fit_estimator(est, &data, &structure, &chain)
                    .and_then(|fit| score(&fit, &truth, &structure))
                {
                    Ok(scores) => {
                        raw.extend(scores.into_iter().map(|(target, metric, value)| RawRecord {
                            cell: cell_of(est),
                            replicate,
                            target,
                            metric,
                            value,
                        }))
                    }
                    Err(e) => failures.push(FailureRecord {
                        cell: cell_of(est),
                        replicate,
                        message: e.to_string(),
                    }),
                }
            }
            (raw, failures)
        })
        .collect();

    let mut raw = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in outputs {
        raw.extend(r);
        failures.extend(f);
    }
    for f in &failures {
        log::warn!(
            "replicate {} of {} n={} beta={} margin={} failed: {}",
            f.replicate,
            f.cell.estimator,
            f.cell.n,
            f.cell.beta,
            f.cell.margin,
            f.message
        );
    }

    let mut summary = Vec::new();
    for &est in &config.estimators {
        for &n in &config.sample_sizes {
            for &beta in &config.betas {
                for &margin in &config.margins {
                    for target in [Target::Correlations, Target::Loadings] {
                        for metric in [Metric::Arb, Metric::Rmse] {
                            let values: Vec<f64> = raw
                                .iter()
                                .filter(|r| {
                                    r.cell.estimator == est
                                        && r.cell.n == n
                                        && r.cell.beta == beta
                                        && r.cell.margin == margin
                                        && r.target == target
                                        && r.metric == metric
                                })
                                .map(|r| r.value)
                                .collect();
                            if values.is_empty() {
                                continue;
                            }
                            let (mean, half) = mean_ci(&values);
                            summary.push(SummaryRecord {
                                cell: Cell {
                                    estimator: est,
                                    n,
                                    beta,
                                    margin,
                                },
                                target,
                                metric,
                                mean,
                                ci_half_width: half,
                                replicates: values.len(),
                            });
                        }
                    }
                }
            }
        }
    }
    raw.sort_by(|a, b| {
        (a.cell.estimator, a.cell.n, a.replicate)
            .cmp(&(b.cell.estimator, b.cell.n, b.replicate))
            .then(a.cell.beta.total_cmp(&b.cell.beta))
            .then(a.cell.margin.to_string().cmp(&b.cell.margin.to_string()))
            .then((a.target, a.metric).cmp(&(b.target, b.metric)))
    });
    Ok(SuiteResults {
        truth,
        summary,
        raw,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    /// Target columns; `None` means every column.
    pub targets: Option<Vec<usize>>,
    pub seed: u64,
    pub chain: ChainConfig,
    pub m_draws: usize,
    pub methods: Vec<Estimator>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            repeats: 10,
            targets: None,
            seed: 0,
            chain: ChainConfig::default(),
            m_draws: DEFAULT_M_DRAWS,
            methods: vec![Estimator::Bgcf, Estimator::Ml],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRecord {
    pub method: Estimator,
    pub target: usize,
    pub repeat: usize,
    pub fold: usize,
    pub mse: f64,
    /// Held-out rows that entered the MSE.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub method: Estimator,
    pub target: usize,
    pub mean: f64,
    pub se: f64,
    pub estimates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResults {
    pub records: Vec<CvRecord>,
    pub summary: Vec<CvSummary>,
    /// `(repeat, fold, reason)` of skipped splits.
    pub skipped: Vec<(usize, usize, String)>,
}

impl CvResults {
    pub fn summary_for(&self, method: Estimator, target: usize) -> Option<&CvSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.target == target)
    }
}

/// Test-fold assignment of every row for one repeat: a seeded shuffle cut
/// into `folds` contiguous blocks of near-equal size.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng_from_seed(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut at = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut fold = rows[at..at + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        at += size;
    }
    out
}

/// Repeated k-fold cross-validation of BGCF and ML regression. Each split
/// trains one chain and one ML fit, shared by every target.
pub fn cross_validate(
    data: &MixedDataset,
    structure: &MeasurementStructure,
    config: &CvConfig,
) -> Result<CvResults> {
    let n = data.n();
    let p = data.p();
    if config.folds < 2 || n < config.folds {
        return Err(BgcfError::InvalidInput(format!(
            "cross-validation needs 2 <= folds <= n (folds = {}, n = {n})",
            config.folds
        )));
    }
    if config.repeats == 0 || config.methods.is_empty() {
        return Err(BgcfError::InvalidInput(
            "cross-validation needs repeats and methods".into(),
        ));
    }
    let targets = config.targets.clone().unwrap_or_else(|| (0..p).collect());
    if let Some(&t) = targets.iter().find(|&&t| t >= p) {
        return Err(BgcfError::InvalidInput(format!(
            "target {t} out of range (p = {p})"
        )));
    }
    config.chain.validate()?;
    let prior = PriorSpec::default_for(structure);
    prior.validate(structure)?;

    let mut splits = Vec::new();
    for r in 0..config.repeats {
        let partition = fold_partition(n, config.folds, derive_seed(config.seed, &[r as u64]));
        for (f, test) in partition.into_iter().enumerate() {
            splits.push((r, f, test));
        }
    }

    let outputs: Vec<std::result::Result<Vec<CvRecord>, (usize, usize, String)>> = splits
        .par_iter()
        .map(|(r, f, test)| {
            let (r, f) = (*r, *f);
            let split_seed = derive_seed(config.seed, &[r as u64, f as u64]);
            let mut in_test = vec![false; n];
            for &i in test {
                in_test[i] = true;
            }
            let train_rows: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let skip = |e: BgcfError| (r, f, e.to_string());
            let train = data.subset_rows(&train_rows).map_err(skip)?;
            let mut records = Vec::new();
            for &method in &config.methods {
                let predictor = train_method(method, &train, structure, &prior, config, split_seed)
                    .map_err(skip)?;
                for &j in &targets {
                    let (preds, actual) = predictor
                        .predict_rows(
                            data,
                            test,
                            j,
                            config.m_draws,
                            derive_seed(split_seed, &[2, j as u64]),
                        )
                        .map_err(skip)?;
                    if preds.is_empty() {
                        continue;
                    }
                    records.push(CvRecord {
                        method,
                        target: j,
                        repeat: r,
                        fold: f,
                        mse: mse(&preds, &actual).map_err(skip)?,
                        rows: preds.len(),
                    });
                }
            }
            Ok(records)
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for out in outputs {
        match out {
            Ok(r) => records.extend(r),
            Err(s) => {
                log::warn!("skipping repeat {} fold {}: {}", s.0, s.1, s.2);
                skipped.push(s);
            }
        }
    }
    let mut summary = Vec::new();
    for &method in &config.methods {
        for &j in &targets {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method && r.target == j)
                .map(|r| r.mse)
                .collect();
            let (mean, se) = mean_se(&values);
            summary.push(CvSummary {
                method,
                target: j,
                mean,
                se,
                estimates: values.len(),
            });
        }
    }
    Ok(CvResults {
        records,
        summary,
        skipped,
    })
}

enum SplitPredictor {
    Bgcf(TrainedPredictor),
    Ml {
        cov: DMatrix<f64>,
        means: nalgebra::DVector<f64>,
    },
}

fn train_method(
    method: Estimator,
    train: &MixedDataset,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
    config: &CvConfig,
    split_seed: u64,
) -> Result<SplitPredictor> {
    match method {
        Estimator::Bgcf => {
            let chain = ChainConfig {
                seed: derive_seed(split_seed, &[1]),
                ..config.chain
            };
            let posterior = run_chain(train, structure, prior, &chain)?;
            Ok(SplitPredictor::Bgcf(TrainedPredictor::from_posterior(
                &posterior, train,
            )?))
        }
        Estimator::Ml => {
            let (cov, means, n_used) = listwise_covariance(train)?;
            let fit = ml_fit(&cov, n_used, structure, &OptConfig::default())?;
            Ok(SplitPredictor::Ml {
                cov: fit.implied_cov(structure),
                means,
            })
        }
    }
}

impl SplitPredictor {
    /// Predictions and actual values of column `j` over the test rows whose
    /// target and predictors are all observed.
    fn predict_rows(
        &self,
        data: &MixedDataset,
        test: &[usize],
        j: usize,
        m_draws: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = data.p();
        let usable: Vec<usize> = test
            .iter()
            .copied()
            .filter(|&i| (0..p).all(|c| data.is_observed(i, c)))
            .collect();
        let actual: Vec<f64> = usable.iter().map(|&i| data.values()[(i, j)]).collect();
        let preds = match self {
            SplitPredictor::Bgcf(model) => {
                let cond = model.conditional(j)?;
                let mut rng = rng_from_seed(seed);
                usable
                    .iter()
                    .map(|&i| {
                        let row: Vec<Option<f64>> = (0..p)
                            .map(|c| {
                                if c == j {
                                    None
                                } else {
                                    Some(data.values()[(i, c)])
                                }
                            })
                            .collect();
                        model
                            .predict_with(&cond, &row, m_draws, &mut rng)
                            .map(|pr| pr.value)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            SplitPredictor::Ml { cov, means } => {
                let (b0, b) = regression_from_cov(cov, means, j)?;
                usable
                    .iter()
                    .map(|&i| {
                        b0 + (0..p)
                            .filter(|&c| c != j)
                            .zip(b.iter())
                            .map(|(c, w)| w * data.values()[(i, c)])
                            .sum::<f64>()
                    })
                    .collect()
            }
        };
        Ok((preds, actual))
    }
}
