//! Maximum-likelihood confirmatory factor analysis and covariance-based
//! linear regression.
//!
//! The fit minimizes
//! `F_ML = ln|Sigma| + tr(S Sigma^{-1}) - ln|S| - p` over
//! `Sigma = Lambda C Lambda^T + D` with a hand-written BFGS.
//!
//! Parameter vector layout: free loadings (one per indicator), then
//! `ln d_j` for indicators of multi-indicator factors, then the strict lower
//! triangle of the unnormalised Cholesky rows of `C` (see [`CorrParam`]).

use nalgebra::{DMatrix, DVector};

use crate::data::MixedDataset;
use crate::error::{BgcfError, Result};
use crate::identify;
use crate::linalg;
use crate::model::{FactorModelParams, MeasurementStructure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Standardized residual variance below which an indicator is reported as a
/// Heywood case.
pub const HEYWOOD_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct MlFit {
    /// Standardized solution (unit response variances).
    pub params: FactorModelParams,
    /// Loadings on the covariance scale of the input.
    pub raw_loadings: Vec<f64>,
    /// Residual variances on the covariance scale of the input.
    pub raw_residuals: Vec<f64>,
    pub f_ml: f64,
    pub f_ml_initial: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Indicators whose standardized residual fell below [`HEYWOOD_THRESHOLD`].
    pub heywood: Vec<usize>,
}

impl MlFit {
    /// Model-implied covariance on the input scale.
    pub fn implied_cov(&self, structure: &MeasurementStructure) -> DMatrix<f64> {
        implied(
            self.params.c(),
            &self.raw_loadings,
            &self.raw_residuals,
            structure,
        )
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(BgcfError::NonConvergence {
                iterations: self.iterations,
                grad_norm: self.gradient_norm,
            })
        }
    }
}

/// Correlation matrix `C = L L^T` with row `i` of `L` equal to
/// `v_i / |v_i|`, `v_i = (x_i0, .., x_i(i-1), 1)`. Any real `x` gives a valid
/// correlation matrix.
#[derive(Debug, Clone, Copy)]
pub struct CorrParam {
    k: usize,
}

impl CorrParam {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn len(&self) -> usize {
        self.k * (self.k - 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let mut at = 0;
        (0..self.k)
            .map(|i| {
                let mut v = DVector::zeros(i + 1);
                for c in 0..i {
                    v[c] = x[at + c];
                }
                v[i] = 1.0;
                at += i;
                v
            })
            .collect()
    }

    pub fn factor(&self, x: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.k, self.k);
        for (i, v) in self.rows(x).iter().enumerate() {
            let norm = v.norm();
            for c in 0..=i {
                l[(i, c)] = v[c] / norm;
            }
        }
        l
    }

    pub fn corr(&self, x: &[f64]) -> DMatrix<f64> {
        let l = self.factor(x);
        linalg::symmetrize(&(&l * l.transpose()))
    }

    /// Inverse map for a positive-definite correlation matrix.
    pub fn from_corr(&self, c: &DMatrix<f64>) -> Result<Vec<f64>> {
        let l = linalg::cholesky_lower(c, "correlation matrix")?;
        let mut x = Vec::with_capacity(self.len());
        for i in 1..self.k {
            for col in 0..i {
                x.push(l[(i, col)] / l[(i, i)]);
            }
        }
        Ok(x)
    }

    /// Chain rule from `dF/dC` (symmetric, entries treated independently) to
    /// `dF/dx`.
    pub fn pullback(&self, x: &[f64], grad_c: &DMatrix<f64>) -> Vec<f64> {
        let l = self.factor(x);
        let grad_l = 2.0 * grad_c * &l;
        let mut out = Vec::with_capacity(self.len());
        for (i, v) in self.rows(x).iter().enumerate().skip(1) {
            let norm = v.norm();
            let li = DVector::from_fn(i + 1, |c, _| l[(i, c)]);
            let gi = DVector::from_fn(i + 1, |c, _| grad_l[(i, c)]);
            let proj = (&gi - &li * li.dot(&gi)) / norm;
            out.extend(proj.iter().take(i));
        }
        out
    }
}

/// Objective and gradient bound to one sample covariance.
struct Objective<'a> {
    s: &'a DMatrix<f64>,
    log_det_s: f64,
    structure: &'a MeasurementStructure,
    /// Indicators with a free log residual, in parameter order.
    free_residuals: Vec<usize>,
    corr: CorrParam,
}

struct Unpacked {
    loadings: Vec<f64>,
    residuals: Vec<f64>,
    c: DMatrix<f64>,
}

impl<'a> Objective<'a> {
    fn new(s: &'a DMatrix<f64>, structure: &'a MeasurementStructure) -> Result<Self> {
        let log_det_s = linalg::log_det_spd(s, "sample covariance")?;
        let free_residuals = (0..structure.p())
            .filter(|&j| !structure.is_single_indicator(structure.factor_of(j)))
            .collect();
        Ok(Self {
            s,
            log_det_s,
            structure,
            free_residuals,
            corr: CorrParam::new(structure.k()),
        })
    }

    fn dim(&self) -> usize {
        self.structure.p() + self.free_residuals.len() + self.corr.len()
    }

    fn unpack(&self, theta: &[f64]) -> Unpacked {
        let p = self.structure.p();
        let loadings = theta[..p].to_vec();
        let mut residuals = vec![0.0; p];
        for (t, &j) in self.free_residuals.iter().enumerate() {
            residuals[j] = theta[p + t].exp();
        }
        let c = self.corr.corr(&theta[p + self.free_residuals.len()..]);
        Unpacked {
            loadings,
            residuals,
            c,
        }
    }

    fn pack(&self, loadings: &[f64], residuals: &[f64], c: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut theta = loadings.to_vec();
        theta.extend(self.free_residuals.iter().map(|&j| residuals[j].ln()));
        theta.extend(self.corr.from_corr(c)?);
        Ok(theta)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let u = self.unpack(theta);
        let sigma = implied(&u.c, &u.loadings, &u.residuals, self.structure);
        let Some(chol) = sigma.cholesky() else {
            return f64::INFINITY;
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace = chol.solve(self.s).trace();
        log_det + trace - self.log_det_s - self.s.nrows() as f64
    }

    fn gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let p = self.structure.p();
        let u = self.unpack(theta);
        let lambda = loading_matrix(&u.loadings, self.structure);
        let sigma = implied(&u.c, &u.loadings, &u.residuals, self.structure);
        let sigma_inv = sigma.cholesky()?.inverse();
        let m = &sigma_inv - &sigma_inv * self.s * &sigma_inv;
        let grad_lambda = 2.0 * &m * &lambda * &u.c;
        let mut g: Vec<f64> = (0..p)
            .map(|j| grad_lambda[(j, self.structure.factor_of(j))])
            .collect();
        g.extend(
            self.free_residuals
                .iter()
                .map(|&j| m[(j, j)] * u.residuals[j]),
        );
        let grad_c = lambda.transpose() * &m * &lambda;
        g.extend(
            self.corr
                .pullback(&theta[p + self.free_residuals.len()..], &grad_c),
        );
        Some(g)
    }
}

fn loading_matrix(loadings: &[f64], structure: &MeasurementStructure) -> DMatrix<f64> {
    let mut lambda = DMatrix::zeros(structure.p(), structure.k());
    for (j, &l) in loadings.iter().enumerate() {
        lambda[(j, structure.factor_of(j))] = l;
    }
    lambda
}

fn implied(
    c: &DMatrix<f64>,
    loadings: &[f64],
    residuals: &[f64],
    structure: &MeasurementStructure,
) -> DMatrix<f64> {
    let lambda = loading_matrix(loadings, structure);
    let mut sigma = &lambda * c * lambda.transpose();
    for (j, &d) in residuals.iter().enumerate() {
        sigma[(j, j)] += d;
    }
    linalg::symmetrize(&sigma)
}

/// `F_ML` at the given covariance-scale parameters.
pub fn f_ml(
    s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    loadings: &[f64],
    residuals: &[f64],
    structure: &MeasurementStructure,
) -> Result<f64> {
    let sigma = implied(c, loadings, residuals, structure);
    let log_det = linalg::log_det_spd(&sigma, "implied covariance")?;
    let trace = linalg::spd_solve(&sigma, s, "implied covariance")?.trace();
    Ok(log_det + trace - linalg::log_det_spd(s, "sample covariance")? - s.nrows() as f64)
}

/// Analytic gradient and value of `F_ML` in the optimizer's parameterization,
/// exposed for derivative checks.
pub fn f_ml_with_gradient(
    s: &DMatrix<f64>,
    structure: &MeasurementStructure,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let obj = Objective::new(s, structure)?;
    if theta.len() != obj.dim() {
        return Err(BgcfError::InvalidInput(format!(
            "parameter vector has {} entries, expected {}",
            theta.len(),
            obj.dim()
        )));
    }
    let g = obj
        .gradient(theta)
        .ok_or_else(|| BgcfError::NotPositiveDefinite("implied covariance".into()))?;
    Ok((obj.value(theta), g))
}

/// Number of free parameters for `structure`.
pub fn parameter_count(structure: &MeasurementStructure) -> usize {
    let free = (0..structure.p())
        .filter(|&j| !structure.is_single_indicator(structure.factor_of(j)))
        .count();
    structure.p() + free + CorrParam::new(structure.k()).len()
}

/// Starting values: triad recovery on the sample correlation when it yields
/// a proper solution, otherwise loadings and residual variances of half the
/// observed variance with `C = I`.
fn initial_values(
    s: &DMatrix<f64>,
    structure: &MeasurementStructure,
) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let p = structure.p();
    let sd: Vec<f64> = (0..p).map(|j| s[(j, j)].sqrt()).collect();
    let single = |j: usize| structure.is_single_indicator(structure.factor_of(j));
    let fallback = || {
        let loadings = (0..p)
            .map(|j| if single(j) { sd[j] } else { 0.5 * sd[j] })
            .collect();
        let residuals = (0..p)
            .map(|j| if single(j) { 0.0 } else { 0.5 * sd[j] * sd[j] })
            .collect();
        (
            loadings,
            residuals,
            DMatrix::identity(structure.k(), structure.k()),
        )
    };
    let Ok(corr) = linalg::cov_to_corr(s) else {
        return fallback();
    };
    let Ok(raw) = identify::recover_raw(&corr, structure) else {
        return fallback();
    };
    let sane_loadings = raw.loadings.iter().all(|l| l.is_finite() && l.abs() < 1.0);
    let sane_residuals = (0..p).all(|j| single(j) || raw.residuals[j] > 0.05);
    let sane_c =
        raw.c.iter().all(|v| v.abs() < 0.95 || v == &1.0) && linalg::is_positive_definite(&raw.c);
    if !(sane_loadings && sane_residuals && sane_c) {
        return fallback();
    }
    let loadings = (0..p)
        .map(|j| {
            if single(j) {
                sd[j]
            } else {
                raw.loadings[j] * sd[j]
            }
        })
        .collect();
    let residuals = (0..p)
        .map(|j| {
            if single(j) {
                0.0
            } else {
                raw.residuals[j] * s[(j, j)]
            }
        })
        .collect();
    (loadings, residuals, raw.c)
}

/// Fits the model to a sample covariance matrix.
///
/// `n` only serves the `n > p` sanity check; the optimum of `F_ML` does not
/// depend on it.
pub fn ml_fit(
    sample_cov: &DMatrix<f64>,
    n: usize,
    structure: &MeasurementStructure,
    config: &OptConfig,
) -> Result<MlFit> {
    let p = structure.p();
    if sample_cov.shape() != (p, p) {
        return Err(BgcfError::InvalidInput(format!(
            "sample covariance is {:?}, structure has {p} indicators",
            sample_cov.shape()
        )));
    }
    if n <= p {
        return Err(BgcfError::InvalidInput(format!(
            "ML fit needs more rows than indicators (n = {n}, p = {p})"
        )));
    }
    if !linalg::is_positive_definite(sample_cov) {
        return Err(BgcfError::NotPositiveDefinite("sample covariance".into()));
    }
    let obj = Objective::new(sample_cov, structure)?;
    let (l0, d0, c0) = initial_values(sample_cov, structure);
    let theta0 = obj.pack(&l0, &d0, &c0)?;
    let result = bfgs(&obj, theta0, config)?;

    let u = obj.unpack(&result.theta);
    let mut loadings = u.loadings;
    let mut c = u.c;
    // Sign convention: first loading of every factor positive.
    for q in 0..structure.k() {
        if loadings[structure.first_indicator(q)] < 0.0 {
            for &j in structure.indicators_of(q) {
                loadings[j] = -loadings[j];
            }
            for r in 0..structure.k() {
                if r != q {
                    c[(q, r)] = -c[(q, r)];
                    c[(r, q)] = -c[(r, q)];
                }
            }
        }
    }
    let residuals = u.residuals;
    let mut std_loadings = vec![0.0; p];
    let mut std_residuals = vec![0.0; p];
    let mut heywood = Vec::new();
    for j in 0..p {
        let total = loadings[j] * loadings[j] + residuals[j];
        std_loadings[j] = loadings[j] / total.sqrt();
        std_residuals[j] = residuals[j] / total;
        if !structure.is_single_indicator(structure.factor_of(j))
            && std_residuals[j] < HEYWOOD_THRESHOLD
        {
            heywood.push(j);
        }
    }
    if !heywood.is_empty() {
        log::warn!("Heywood case: near-zero residual variance for indicators {heywood:?}");
    }
    if !result.converged {
        log::warn!(
            "ML optimizer stopped after {} iterations with gradient norm {:.3e}",
            result.iterations,
            result.gradient_norm
        );
    }
    let params = FactorModelParams::from_loadings(c, &std_loadings, &std_residuals, structure)?;
    Ok(MlFit {
        params,
        raw_loadings: loadings,
        raw_residuals: residuals,
        f_ml: result.value,
        f_ml_initial: result.initial_value,
        iterations: result.iterations,
        gradient_norm: result.gradient_norm,
        converged: result.converged,
        heywood,
    })
}

struct BfgsResult {
    theta: Vec<f64>,
    value: f64,
    initial_value: f64,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

/// BFGS on the inverse Hessian with Armijo backtracking. Only steps that
/// decrease the objective are taken.
fn bfgs(obj: &Objective<'_>, theta0: Vec<f64>, config: &OptConfig) -> Result<BfgsResult> {
    let dim = theta0.len();
    let mut x = DVector::from_vec(theta0);
    let mut f = obj.value(x.as_slice());
    if !f.is_finite() {
        return Err(BgcfError::Numerical(
            "ML starting point has a singular implied covariance".into(),
        ));
    }
    let initial_value = f;
    let mut g =
        DVector::from_vec(obj.gradient(x.as_slice()).ok_or_else(|| {
            BgcfError::Numerical("gradient undefined at the starting point".into())
        })?);
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut iterations = 0;
    while iterations < config.max_iterations && g.norm() >= config.gradient_tolerance {
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            h = DMatrix::identity(dim, dim);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let fc = obj.value(cand.as_slice());
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let Some(g_new) = obj.gradient(x_new.as_slice()) else {
            break;
        };
        let g_new = DVector::from_vec(g_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let gradient_norm = g.norm();
    Ok(BfgsResult {
        theta: x.as_slice().to_vec(),
        value: f,
        initial_value,
        iterations,
        gradient_norm,
        converged: gradient_norm < config.gradient_tolerance,
    })
}

/// Covariance (divisor `n`) and means over the rows observed in every column.
/// Ordinal levels enter with their numeric values.
pub fn listwise_covariance(data: &MixedDataset) -> Result<(DMatrix<f64>, DVector<f64>, usize)> {
    let rows = data.complete_rows();
    let n = rows.len();
    let p = data.p();
    if n < 2 {
        return Err(BgcfError::InvalidInput(format!(
            "only {n} complete rows after listwise deletion"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| data.values()[(rows[i], j)]);
    let means = DVector::from_fn(p, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / n as f64;
    Ok((linalg::symmetrize(&cov), means, n))
}

/// Regression of column `j` on the others implied by a covariance matrix:
/// `b = S[-j,-j]^{-1} S[-j,j]`, `b0 = mean_j - b . mean_{-j}`.
pub fn regression_from_cov(
    s_hat: &DMatrix<f64>,
    means: &DVector<f64>,
    j: usize,
) -> Result<(f64, DVector<f64>)> {
    let p = s_hat.nrows();
    if j >= p || means.len() != p {
        return Err(BgcfError::InvalidInput(format!(
            "target {j} out of range for a {p}x{p} matrix with {} means",
            means.len()
        )));
    }
    let others: Vec<usize> = (0..p).filter(|&r| r != j).collect();
    let s_oo = linalg::select(s_hat, &others, &others);
    let s_oj = linalg::select(s_hat, &others, &[j]);
    let b = linalg::spd_solve(&s_oo, &s_oj, "predictor block")?
        .column(0)
        .into_owned();
    let mean_o = linalg::select_vec(means, &others);
    let b0 = means[j] - b.dot(&mean_o);
    Ok((b0, b))
}
