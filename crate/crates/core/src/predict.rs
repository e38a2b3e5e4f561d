//! Regression through the latent Gaussian layer.
//!
//! Predictors are mapped to normal scores with their training margins, the
//! target's latent value is drawn from its Gaussian conditional under the
//! posterior-mean response correlation, and each draw is mapped back through
//! the target's empirical quantile function. The prediction is the average.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::MixedDataset;
use crate::dist;
use crate::error::{BgcfError, Result};
use crate::gibbs::{run_chain, ChainConfig, PosteriorSummary, PriorSpec};
use crate::linalg;
use crate::model::MeasurementStructure;

pub const DEFAULT_M_DRAWS: usize = 100;

/// Empirical CDF of the observed values of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMargin {
    sorted: Vec<f64>,
}

impl EmpiricalMargin {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(BgcfError::InvalidInput(
                "empirical margin needs at least one finite value".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// `#{x_i <= y} / m`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= y) as f64 / self.len() as f64
    }

    /// `inf {x : F(x) >= t}`, clamped to the observed range.
    pub fn quantile(&self, t: f64) -> f64 {
        let m = self.len();
        let idx = (t * m as f64).ceil() as isize - 1;
        self.sorted[idx.clamp(0, m as isize - 1) as usize]
    }

    /// Normal score `Phi^{-1}(m / (m + 1) F(y))` after clamping `y` to the
    /// observed range. The flag is set when clamping happened.
    pub fn normal_score(&self, y: f64) -> (f64, bool) {
        let clamped = y < self.min() || y > self.max();
        let y = y.clamp(self.min(), self.max());
        let m = self.len() as f64;
        (dist::norm_quantile(m / (m + 1.0) * self.cdf(y)), clamped)
    }
}

/// Posterior response correlation plus training margins.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    s_hat: DMatrix<f64>,
    margins: Vec<EmpiricalMargin>,
    names: Vec<String>,
}

/// Gaussian conditional of one latent response given the others.
#[derive(Debug, Clone)]
pub struct LatentConditional {
    pub target: usize,
    pub predictors: Vec<usize>,
    pub weights: DVector<f64>,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    /// Predictor columns whose value was outside the training range.
    pub clamped: Vec<usize>,
}

impl TrainedPredictor {
    /// `s_hat` must be the response correlation learned on `data`.
    pub fn from_parts(s_hat: DMatrix<f64>, data: &MixedDataset) -> Result<Self> {
        let p = data.p();
        if s_hat.shape() != (p, p) {
            return Err(BgcfError::InvalidInput(format!(
                "correlation matrix is {:?}, data has {p} columns",
                s_hat.shape()
            )));
        }
        if !linalg::is_positive_definite(&s_hat) {
            return Err(BgcfError::NotPositiveDefinite(
                "response correlation".into(),
            ));
        }
        let margins = (0..p)
            .map(|j| EmpiricalMargin::new(data.observed_column(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            s_hat,
            margins,
            names: data.columns().iter().map(|c| c.name.clone()).collect(),
        })
    }

    pub fn from_posterior(posterior: &PosteriorSummary, data: &MixedDataset) -> Result<Self> {
        Self::from_parts(posterior.response_correlation(), data)
    }

    pub fn s_hat(&self) -> &DMatrix<f64> {
        &self.s_hat
    }

    pub fn margin(&self, j: usize) -> &EmpiricalMargin {
        &self.margins[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn p(&self) -> usize {
        self.s_hat.nrows()
    }

    /// `mu* = S[j,-j] S[-j,-j]^{-1} z`, `sigma*^2 = 1 - S[j,-j] S[-j,-j]^{-1} S[-j,j]`.
    pub fn conditional(&self, j: usize) -> Result<LatentConditional> {
        let p = self.p();
        if j >= p {
            return Err(BgcfError::InvalidInput(format!(
                "target {j} out of range (p = {p})"
            )));
        }
        let predictors: Vec<usize> = (0..p).filter(|&r| r != j).collect();
        let s_oo = linalg::select(&self.s_hat, &predictors, &predictors);
        let s_oj = linalg::select(&self.s_hat, &predictors, &[j]);
        let weights = linalg::spd_solve(&s_oo, &s_oj, "predictor correlation block")?
            .column(0)
            .into_owned();
        let var = self.s_hat[(j, j)] - weights.dot(&s_oj.column(0));
        Ok(LatentConditional {
            target: j,
            predictors,
            weights,
            sd: var.max(0.0).sqrt(),
        })
    }

    /// Predicts column `cond.target` of `row` (length `p`; the target entry is
    /// ignored, every other entry must be present).
    pub fn predict_with<R: Rng + ?Sized>(
        &self,
        cond: &LatentConditional,
        row: &[Option<f64>],
        m_draws: usize,
        rng: &mut R,
    ) -> Result<Prediction> {
        if row.len() != self.p() {
            return Err(BgcfError::InvalidInput(format!(
                "row has {} entries, expected {}",
                row.len(),
                self.p()
            )));
        }
        if m_draws == 0 {
            return Err(BgcfError::InvalidInput("m_draws must be at least 1".into()));
        }
        let mut clamped = Vec::new();
        let mut mu = 0.0;
        for (&k, &w) in cond.predictors.iter().zip(cond.weights.iter()) {
            let y = row[k].ok_or_else(|| {
                BgcfError::InvalidInput(format!("predictor `{}` is missing", self.names[k]))
            })?;
            let (z, was_clamped) = self.margins[k].normal_score(y);
            if was_clamped {
                clamped.push(k);
            }
            mu += w * z;
        }
        let target = &self.margins[cond.target];
        let total: f64 = (0..m_draws)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                target.quantile(dist::norm_cdf(mu + cond.sd * e))
            })
            .sum();
        Ok(Prediction {
            value: total / m_draws as f64,
            clamped,
        })
    }

    pub fn predict<R: Rng + ?Sized>(
        &self,
        row: &[Option<f64>],
        j: usize,
        m_draws: usize,
        rng: &mut R,
    ) -> Result<Prediction> {
        self.predict_with(&self.conditional(j)?, row, m_draws, rng)
    }
}

/// Runs a chain on `data` and keeps what prediction needs.
pub fn train(
    data: &MixedDataset,
    structure: &MeasurementStructure,
    prior: &PriorSpec,
    config: &ChainConfig,
) -> Result<TrainedPredictor> {
    let posterior = run_chain(data, structure, prior, config)?;
    TrainedPredictor::from_posterior(&posterior, data)
}
