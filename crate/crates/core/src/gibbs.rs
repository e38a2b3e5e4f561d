//! Gibbs sampler for the Gaussian copula factor model with missing values.
//!
//! One sweep updates, in order:
//!
//! 1. observed latent responses `Z_obs`, each truncated to the interval its
//!    rank allows given the current values of the neighbouring levels;
//! 2. missing latent responses `Z_miss`, unrestricted;
//! 3. factor scores `eta` given `Z`, followed by sign alignment with each
//!    factor's first indicator;
//! 4. the graph-constrained precision of `X = (Z, eta)`.
//!
//! Step 4 uses the factorised form of the G-Wishart conjugate update that the
//! pure measurement graph admits: an inverse-Wishart draw for the factor
//! covariance and an independent normal/inverse-gamma regression update of
//! `(lambda_j, d_j)` for every indicator. The joint covariance implied by the
//! draw is rescaled to a correlation matrix before the next sweep.
//!
//! Single-indicator factors are handled by identifying `eta_q` with `Z_j`:
//! the latent column is drawn from its conditional given the other factors
//! and copied into `eta_q`, so `lambda = 1` and `d = 0` hold exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::MixedDataset;
use crate::dist;
use crate::error::{BgcfError, Result};
use crate::linalg;
use crate::model::{
    assemble_sigma, build_precision_graph, extract_params, FactorModelParams, JointCorrelation,
    MeasurementStructure, PrecisionGraph,
};
use crate::rng::{rng_from_seed, ChainRng};

/// Hyperparameters of the G-Wishart prior `W_G(nu0, diag(psi0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub nu0: f64,
    /// Diagonal of the scale matrix, length `p + k`.
    pub psi0: Vec<f64>,
}

impl PriorSpec {
    /// `nu0 = k + 1`, `psi0 = I`: uniform marginal prior on each interfactor
    /// correlation.
    pub fn default_for(structure: &MeasurementStructure) -> Self {
        Self {
            nu0: structure.k() as f64 + 1.0,
            psi0: vec![1.0; structure.p() + structure.k()],
        }
    }

    pub fn validate(&self, structure: &MeasurementStructure) -> Result<()> {
        let k = structure.k() as f64;
        if !(self.nu0 >= k + 1.0) {
            return Err(BgcfError::InvalidInput(format!(
                "prior degrees of freedom {} must be at least k + 1 = {}",
                self.nu0,
                k + 1.0
            )));
        }
        if self.psi0.len() != structure.p() + structure.k() {
            return Err(BgcfError::InvalidInput(format!(
                "prior scale has {} entries, expected {}",
                self.psi0.len(),
                structure.p() + structure.k()
            )));
        }
        if self.psi0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(BgcfError::InvalidInput(
                "prior scale entries must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 100,
            thinning: 1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(BgcfError::InvalidInput(format!(
                "burn-in {} must be smaller than the number of iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(BgcfError::InvalidInput(
                "thinning must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// Current point of the Markov chain.
#[derive(Debug, Clone)]
pub struct GibbsState {
    /// `n x p` latent responses.
    pub z: DMatrix<f64>,
    /// `n x k` factor scores.
    pub eta: DMatrix<f64>,
    /// Current joint correlation of `(Z, eta)`.
    pub sigma: JointCorrelation,
    /// Correlation-scale parameters behind `sigma`. Not sign-constrained.
    pub params: FactorModelParams,
    pub iteration: usize,
}

impl GibbsState {
    /// Joint precision of the current draw with exact structural zeros.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        self.params.precision()
    }
}

/// Observed rows of every column grouped by rank key, ascending, plus the
/// missing rows.
#[derive(Debug, Clone)]
struct RankIndex {
    groups: Vec<Vec<Vec<usize>>>,
    missing: Vec<Vec<usize>>,
}

impl RankIndex {
    fn new(data: &MixedDataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let keys = data.rank_keys();
        let mut groups = Vec::with_capacity(p);
        let mut missing = Vec::with_capacity(p);
        for j in 0..p {
            let mut obs: Vec<usize> = (0..n).filter(|&i| data.is_observed(i, j)).collect();
            obs.sort_by(|&a, &b| keys[(a, j)].total_cmp(&keys[(b, j)]));
            let mut col_groups: Vec<Vec<usize>> = Vec::new();
            let mut last = f64::NAN;
            for i in obs {
                let key = keys[(i, j)];
                match col_groups.last_mut() {
                    Some(g) if key == last => g.push(i),
                    _ => col_groups.push(vec![i]),
                }
                last = key;
            }
            groups.push(col_groups);
            missing.push((0..n).filter(|&i| !data.is_observed(i, j)).collect());
        }
        Self { groups, missing }
    }
}

/// Per-iteration record of the draw, for convergence inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub loadings: Vec<f64>,
    pub correlations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    /// One record per iteration, burn-in included.
    pub trace: Vec<IterationRecord>,
    /// RMSE between each iteration's loadings and the final estimate.
    pub loading_rmse_to_final: Vec<f64>,
    /// RMSE between each iteration's interfactor correlations and the final
    /// estimate (empty vectors when `k = 1`).
    pub correlation_rmse_to_final: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// Retained draws after burn-in and thinning.
    pub draws: Vec<JointCorrelation>,
    /// Element-wise mean of `draws`.
    pub sigma_hat: JointCorrelation,
    pub params_hat: FactorModelParams,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorSummary {
    /// Posterior-mean correlation over the responses, `Sigma_hat[Z, Z]`.
    pub fn response_correlation(&self) -> DMatrix<f64> {
        self.sigma_hat.response_block()
    }
}

/// Binds data, structure and prior for sampling.
pub struct GibbsSampler<'a> {
    data: &'a MixedDataset,
    structure: &'a MeasurementStructure,
    prior: PriorSpec,
    graph: PrecisionGraph,
    ranks: RankIndex,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        data: &'a MixedDataset,
        structure: &'a MeasurementStructure,
        prior: PriorSpec,
    ) -> Result<Self> {
        if data.p() != structure.p() {
            return Err(BgcfError::InvalidInput(format!(
                "dataset has {} columns, structure has {} indicators",
                data.p(),
                structure.p()
            )));
        }
        prior.validate(structure)?;
        Ok(Self {
            data,
            structure,
            prior,
            graph: build_precision_graph(structure),
            ranks: RankIndex::new(data),
        })
    }

    pub fn graph(&self) -> &PrecisionGraph {
        &self.graph
    }

    pub fn structure(&self) -> &MeasurementStructure {
        self.structure
    }

    /// Deterministic starting point: normal scores of the observed ranks
    /// (ties share a score, missing cells 0); factor scores as standardized
    /// means of their indicators; `Sigma` at the conjugate posterior mode given
    /// those `(Z, eta)`.
    pub fn init_state(&self) -> Result<GibbsState> {
        let (n, p, k) = (self.data.n(), self.structure.p(), self.structure.k());
        let mut z = DMatrix::zeros(n, p);
        for j in 0..p {
            let groups = &self.ranks.groups[j];
            let n_obs: usize = groups.iter().map(Vec::len).sum();
            if groups.len() < 2 {
                return Err(BgcfError::DegenerateColumn {
                    column: self.data.columns()[j].name.clone(),
                });
            }
            let mut below = 0usize;
            for g in groups {
                let mid_rank = below as f64 + (g.len() as f64 + 1.0) / 2.0;
                let score = dist::norm_quantile(mid_rank / (n_obs as f64 + 1.0));
                for &i in g {
                    z[(i, j)] = score;
                }
                below += g.len();
            }
        }
        let mut eta = DMatrix::zeros(n, k);
        for q in 0..k {
            let members = self.structure.indicators_of(q);
            let mut col: Vec<f64> = (0..n)
                .map(|i| members.iter().map(|&j| z[(i, j)]).sum::<f64>() / members.len() as f64)
                .collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
            eta.column_mut(q).copy_from_slice(&col);
        }
        let params = posterior_mode(&z, &eta, self.structure, &self.prior)?;
        let sigma = assemble_sigma(&params, self.structure)?.sigma;
        Ok(GibbsState {
            z,
            eta,
            sigma,
            params,
            iteration: 0,
        })
    }

    /// Step 1: redraw every observed `z_ij` within the bounds set by the
    /// neighbouring levels of its column.
    pub fn sample_z_observed<R: Rng + ?Sized>(
        &self,
        state: &mut GibbsState,
        rng: &mut R,
    ) -> Result<()> {
        for j in 0..self.structure.p() {
            let cond = self.conditional(state, j)?;
            let groups = &self.ranks.groups[j];
            for t in 0..groups.len() {
                let lo = if t > 0 {
                    groups[t - 1]
                        .iter()
                        .map(|&i| state.z[(i, j)])
                        .fold(f64::NEG_INFINITY, f64::max)
                } else {
                    f64::NEG_INFINITY
                };
                let hi = if t + 1 < groups.len() {
                    groups[t + 1]
                        .iter()
                        .map(|&i| state.z[(i, j)])
                        .fold(f64::INFINITY, f64::min)
                } else {
                    f64::INFINITY
                };
                for &i in &groups[t] {
                    let mu = cond.mean(state, i);
                    state.z[(i, j)] = dist::truncated_normal(rng, mu, cond.sd, lo, hi);
                }
            }
        }
        Ok(())
    }

    /// Step 2: redraw every missing `z_ij` from its unrestricted conditional.
    pub fn sample_z_missing<R: Rng + ?Sized>(
        &self,
        state: &mut GibbsState,
        rng: &mut R,
    ) -> Result<()> {
        for j in 0..self.structure.p() {
            if self.ranks.missing[j].is_empty() {
                continue;
            }
            let cond = self.conditional(state, j)?;
            for &i in &self.ranks.missing[j] {
                let mu = cond.mean(state, i);
                let e: f64 = StandardNormal.sample(rng);
                state.z[(i, j)] = mu + cond.sd * e;
            }
        }
        Ok(())
    }

    /// Step 3: factor scores from `Normal(A z_i, B)` with
    /// `A = Sigma[eta, Z] Sigma[Z, Z]^{-1}` and `B = Sigma[eta, eta] - A Sigma[Z, eta]`,
    /// then sign alignment with each factor's first indicator.
    pub fn sample_eta<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R) -> Result<()> {
        let s = self.structure;
        let (n, k) = (state.z.nrows(), s.k());
        let szz = state.sigma.response_block();
        let sze = state.sigma.cross_block();
        let a_t = linalg::spd_solve(&szz, &sze, "response correlation block")?;
        let b = linalg::symmetrize(&(state.sigma.factor_block() - a_t.transpose() * &sze));

        let free: Vec<usize> = (0..k).filter(|&q| !s.is_single_indicator(q)).collect();
        if !free.is_empty() {
            let b_free = linalg::select(&b, &free, &free);
            let l = linalg::psd_factor(&b_free, 1e-8, "conditional factor covariance B")?;
            let a_free = linalg::select(&a_t, &(0..s.p()).collect::<Vec<_>>(), &free);
            let mean = &state.z * a_free;
            let noise: DMatrix<f64> =
                DMatrix::from_fn(n, free.len(), |_, _| StandardNormal.sample(rng));
            let draw = mean + noise * l.transpose();
            for (c, &q) in free.iter().enumerate() {
                state.eta.set_column(q, &draw.column(c));
            }
        }
        for q in 0..k {
            let first = s.first_indicator(q);
            if s.is_single_indicator(q) {
                let zc = state.z.column(first).into_owned();
                state.eta.set_column(q, &zc);
            } else if column_cov(&state.eta, q, &state.z, first) < 0.0 {
                state.eta.column_mut(q).neg_mut();
            }
        }
        Ok(())
    }

    /// Step 4: draw the graph-constrained precision and store the implied
    /// joint correlation.
    pub fn sample_omega<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R) -> Result<()> {
        let params =
            draw_constrained_posterior(&state.z, &state.eta, self.structure, &self.prior, rng)?;
        state.sigma = assemble_sigma(&params, self.structure)?.sigma;
        state.params = params;
        Ok(())
    }

    /// One full sweep of steps 1-4 including recentering.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R) -> Result<()> {
        self.sample_z_observed(state, rng)?;
        self.sample_z_missing(state, rng)?;
        recenter_z(state);
        self.sample_eta(state, rng)?;
        self.sample_omega(state, rng)?;
        state.iteration += 1;
        Ok(())
    }

    /// Runs the chain and summarises the retained draws.
    ///
    /// Convergence is not checked; inspect `diagnostics` or export the draws.
    pub fn run(&self, config: &ChainConfig) -> Result<PosteriorSummary> {
        config.validate()?;
        let mut rng: ChainRng = rng_from_seed(config.seed);
        let mut state = self.init_state()?;
        let mut draws = Vec::with_capacity(config.retained());
        let mut trace = Vec::with_capacity(config.iterations);
        for it in 1..=config.iterations {
            self.sweep(&mut state, &mut rng)?;
            trace.push(IterationRecord {
                loadings: state.params.loadings(self.structure),
                correlations: state.params.factor_correlations(),
            });
            if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thinning) {
                draws.push(state.sigma.clone());
            }
        }
        let sigma_hat = JointCorrelation::mean_of(&draws)?;
        let params_hat = extract_params(&sigma_hat, self.structure)?;
        let final_loadings = params_hat.loadings(self.structure);
        let final_corr = params_hat.factor_correlations();
        let diagnostics = ChainDiagnostics {
            loading_rmse_to_final: trace
                .iter()
                .map(|r| rms_diff(&r.loadings, &final_loadings))
                .collect(),
            correlation_rmse_to_final: trace
                .iter()
                .map(|r| rms_diff(&r.correlations, &final_corr))
                .collect(),
            trace,
        };
        Ok(PosteriorSummary {
            draws,
            sigma_hat,
            params_hat,
            diagnostics,
        })
    }

    /// Conditional law of `Z_j` given the factor scores.
    fn conditional(&self, state: &GibbsState, j: usize) -> Result<Conditional> {
        let s = self.structure;
        let p = s.p();
        let q = s.factor_of(j);
        let sigma = state.sigma.matrix();
        if s.is_single_indicator(q) {
            // Z_j = eta_q: condition on the remaining factors instead.
            let others: Vec<usize> = (0..s.k()).filter(|&r| r != q).collect();
            if others.is_empty() {
                return Ok(Conditional {
                    factors: vec![],
                    weights: vec![],
                    sd: 1.0,
                });
            }
            let c = state.sigma.factor_block();
            let c_oo = linalg::select(&c, &others, &others);
            let c_oq = linalg::select(&c, &others, &[q]);
            let w = linalg::spd_solve(&c_oo, &c_oq, "factor correlation block")?;
            let var = 1.0 - (c_oq.transpose() * &w)[(0, 0)];
            if !(var > 0.0) {
                return Err(BgcfError::Numerical(format!(
                    "non-positive conditional variance {var:.3e} for indicator {j}"
                )));
            }
            return Ok(Conditional {
                factors: others,
                weights: w.iter().copied().collect(),
                sd: var.sqrt(),
            });
        }
        let fq = p + q;
        let a = sigma[(j, fq)] / sigma[(fq, fq)];
        let var = sigma[(j, j)] - a * sigma[(fq, j)];
        if !(var > 0.0) {
            return Err(BgcfError::Numerical(format!(
                "non-positive conditional variance {var:.3e} for indicator {j}"
            )));
        }
        Ok(Conditional {
            factors: vec![q],
            weights: vec![a],
            sd: var.sqrt(),
        })
    }
}

struct Conditional {
    factors: Vec<usize>,
    weights: Vec<f64>,
    sd: f64,
}

impl Conditional {
    #[inline]
    fn mean(&self, state: &GibbsState, i: usize) -> f64 {
        self.factors
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| state.eta[(i, q)] * w)
            .sum()
    }
}

/// Subtracts each column's mean from `Z`. Shifts preserve within-column order.
pub fn recenter_z(state: &mut GibbsState) {
    let n = state.z.nrows();
    if n == 0 {
        return;
    }
    for mut col in state.z.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
}

/// Runs a chain on `data` with the given prior and configuration.
pub fn run_chain(
    data: &MixedDataset,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
    config: &ChainConfig,
) -> Result<PosteriorSummary> {
    GibbsSampler::new(data, structure, prior.clone())?.run(config)
}

struct Sufficient {
    c_scale: DMatrix<f64>,
    c_dof: f64,
    /// Per indicator: `(kappa, m, shape, rate)` of the normal/inverse-gamma
    /// posterior of `(lambda_j, d_j)`; `None` for single-indicator factors.
    rows: Vec<Option<(f64, f64, f64, f64)>>,
}

fn sufficient(
    z: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
) -> Result<Sufficient> {
    let (p, k) = (structure.p(), structure.k());
    let n = z.nrows();
    if z.ncols() != p || eta.ncols() != k || eta.nrows() != n {
        return Err(BgcfError::InvalidInput(format!(
            "latent shapes Z {:?}, eta {:?} do not match p={p}, k={k}",
            z.shape(),
            eta.shape()
        )));
    }
    let mut c_scale = eta.transpose() * eta;
    for q in 0..k {
        c_scale[(q, q)] += prior.psi0[p + q];
    }
    let rows = (0..p)
        .map(|j| {
            let q = structure.factor_of(j);
            if structure.is_single_indicator(q) {
                return None;
            }
            let x = eta.column(q);
            let y = z.column(j);
            let sxx = x.dot(&x);
            let sxy = x.dot(&y);
            let syy = y.dot(&y);
            let kappa = 1.0 + sxx;
            let m = sxy / kappa;
            let shape = 0.5 * (prior.nu0 + n as f64);
            let rate = 0.5 * (prior.psi0[j] + (syy - kappa * m * m).max(0.0));
            Some((kappa, m, shape, rate))
        })
        .collect();
    Ok(Sufficient {
        c_scale: linalg::symmetrize(&c_scale),
        c_dof: prior.nu0 + n as f64,
        rows,
    })
}

/// One draw from the graph-constrained conjugate posterior given complete
/// `(Z, eta)`, returned on the correlation scale. With zero rows this is a
/// draw from the prior.
pub fn draw_constrained_posterior<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<FactorModelParams> {
    let suff = sufficient(z, eta, structure, prior)?;
    let c_cov = dist::inverse_wishart(rng, suff.c_dof, &suff.c_scale)?;
    let mut loadings = Vec::with_capacity(structure.p());
    let mut residuals = Vec::with_capacity(structure.p());
    for row in &suff.rows {
        match *row {
            None => {
                loadings.push(1.0);
                residuals.push(0.0);
            }
            Some((kappa, m, shape, rate)) => {
                let d = dist::inverse_gamma(rng, shape, rate)?;
                let e: f64 = StandardNormal.sample(rng);
                loadings.push(m + (d / kappa).sqrt() * e);
                residuals.push(d);
            }
        }
    }
    standardize(&c_cov, &loadings, &residuals, structure)
}

/// Posterior mode given complete `(Z, eta)`; used as the starting point.
fn posterior_mode(
    z: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
) -> Result<FactorModelParams> {
    let suff = sufficient(z, eta, structure, prior)?;
    let k = structure.k() as f64;
    let c_cov = &suff.c_scale / (suff.c_dof + k + 1.0);
    let mut loadings = Vec::with_capacity(structure.p());
    let mut residuals = Vec::with_capacity(structure.p());
    for row in &suff.rows {
        match *row {
            None => {
                loadings.push(1.0);
                residuals.push(0.0);
            }
            Some((_, m, shape, rate)) => {
                loadings.push(m);
                residuals.push(rate / (shape + 1.0));
            }
        }
    }
    standardize(&c_cov, &loadings, &residuals, structure)
}

/// Maps a covariance-scale draw `(C_cov, lambda, d)` to the equivalent
/// correlation-scale parameters.
fn standardize(
    c_cov: &DMatrix<f64>,
    loadings: &[f64],
    residuals: &[f64],
    structure: &MeasurementStructure,
) -> Result<FactorModelParams> {
    let (p, k) = (structure.p(), structure.k());
    let c = linalg::cov_to_corr(c_cov)?;
    let mut lambda = DMatrix::zeros(p, k);
    let mut d = DVector::zeros(p);
    for j in 0..p {
        let q = structure.factor_of(j);
        if structure.is_single_indicator(q) {
            lambda[(j, q)] = 1.0;
            continue;
        }
        let var_q = c_cov[(q, q)];
        let total = loadings[j] * loadings[j] * var_q + residuals[j];
        if !(total > 0.0) || !total.is_finite() {
            return Err(BgcfError::Numerical(format!(
                "non-positive implied variance {total:.3e} for indicator {j}"
            )));
        }
        let s = total.sqrt();
        lambda[(j, q)] = loadings[j] * var_q.sqrt() / s;
        d[j] = residuals[j] / total;
    }
    Ok(FactorModelParams::new_unchecked(c, lambda, d))
}

fn column_cov(a: &DMatrix<f64>, ca: usize, b: &DMatrix<f64>, cb: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let x = a.column(ca);
    let y = b.column(cb);
    let mx = x.sum() / n as f64;
    let my = y.sum() / n as f64;
    x.iter()
        .zip(y.iter())
        .map(|(u, v)| (u - mx) * (v - my))
        .sum::<f64>()
        / n as f64
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// True when every observed pair in every column satisfies
/// `y_ij < y_kj => z_ij < z_kj`.
pub fn satisfies_rank_order(z: &DMatrix<f64>, data: &MixedDataset) -> bool {
    let keys = data.rank_keys();
    for j in 0..data.p() {
        let mut obs: Vec<usize> = (0..data.n()).filter(|&i| data.is_observed(i, j)).collect();
        obs.sort_by(|&a, &b| keys[(a, j)].total_cmp(&keys[(b, j)]));
        let mut prev_key = f64::NEG_INFINITY;
        let mut prev_max = f64::NEG_INFINITY;
        let mut cur_max = f64::NEG_INFINITY;
        for &i in &obs {
            let key = keys[(i, j)];
            if key != prev_key {
                prev_max = prev_max.max(cur_max);
                cur_max = f64::NEG_INFINITY;
                prev_key = key;
            }
            if z[(i, j)] <= prev_max {
                return false;
            }
            cur_max = cur_max.max(z[(i, j)]);
        }
    }
    true
}
