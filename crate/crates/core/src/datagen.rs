//! Population models and synthetic mixed data.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Column, ColumnKind, MixedDataset};
use crate::dist;
use crate::error::{BgcfError, Result};
use crate::linalg;
use crate::model::{FactorModelParams, MeasurementStructure};
use crate::rng::{derive_seed, rng_from_seed};

pub const PAPER_LOADING: f64 = 0.7;
pub const PAPER_RESIDUAL: f64 = 0.51;

/// Four factors with four indicators each.
pub fn paper_structure() -> MeasurementStructure {
    MeasurementStructure::from_block_sizes(&[4, 4, 4, 4]).expect("valid block sizes")
}

/// Correlated four-factor population: interfactor correlations drawn from
/// Uniform(0.2, 0.4), all loadings 0.7, all residuals 0.51.
pub fn build_paper_model(seed: u64) -> FactorModelParams {
    let structure = paper_structure();
    for attempt in 0u64.. {
        let mut rng = rng_from_seed(derive_seed(seed, &[attempt]));
        let mut c = DMatrix::identity(4, 4);
        for q in 0..4 {
            for r in q + 1..4 {
                let v = rng.random_range(0.2..0.4);
                c[(q, r)] = v;
                c[(r, q)] = v;
            }
        }
        match FactorModelParams::from_loadings(
            c,
            &[PAPER_LOADING; 16],
            &[PAPER_RESIDUAL; 16],
            &structure,
        ) {
            Ok(params) => return params,
            Err(e) => log::warn!("population draw {attempt} rejected ({e}); retrying"),
        }
    }
    unreachable!()
}

/// `n` i.i.d. rows of `eta ~ N(0, C)` and `Z = Lambda eta + eps`.
pub fn sample_latent<R: Rng + ?Sized>(
    params: &FactorModelParams,
    n: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = params.c().nrows();
    let p = params.lambda().nrows();
    let l = linalg::cholesky_lower(params.c(), "interfactor correlation C")?;
    let e: DMatrix<f64> = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    let eta = e * l.transpose();
    let noise_sd: DVector<f64> = params.d().map(f64::sqrt);
    let eps: DMatrix<f64> = DMatrix::from_fn(n, p, |_, j| {
        let e: f64 = StandardNormal.sample(rng);
        noise_sd[j] * e
    });
    let z = &eta * params.lambda().transpose() + eps;
    Ok((eta, z))
}

/// Observed margin of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginSpec {
    Gaussian,
    /// Equal-probability categories `1..=c`.
    Ordinal {
        categories: usize,
    },
    /// `Y = F^{-1}(Phi(z))` with `F` the chi-squared CDF.
    ChiSquared {
        df: f64,
    },
}

impl MarginSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginSpec::Ordinal { categories } if categories < 2 => Err(BgcfError::InvalidInput(
                format!("ordinal margin needs at least 2 categories, got {categories}"),
            )),
            MarginSpec::ChiSquared { df } if !(df >= 1.0) => Err(BgcfError::InvalidInput(format!(
                "chi-squared margin needs df >= 1, got {df}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn column_kind(&self) -> ColumnKind {
        match *self {
            MarginSpec::Ordinal { categories } => {
                ColumnKind::ordinal_from_values((1..=categories).map(|c| c as f64).collect())
            }
            _ => ColumnKind::Continuous,
        }
    }
}

/// Maps a latent column to the observed scale after dividing by `sd`.
pub fn apply_margin(z: &[f64], sd: f64, margin: MarginSpec) -> Vec<f64> {
    match margin {
        MarginSpec::Gaussian => z.iter().map(|v| v / sd).collect(),
        MarginSpec::Ordinal { categories } => {
            let cuts: Vec<f64> = (1..categories)
                .map(|m| dist::norm_quantile(m as f64 / categories as f64))
                .collect();
            z.iter()
                .map(|v| {
                    let x = v / sd;
                    (1 + cuts.iter().filter(|&&t| x >= t).count()) as f64
                })
                .collect()
        }
        MarginSpec::ChiSquared { df } => z
            .iter()
            .map(|v| dist::chi_squared_quantile(df, dist::norm_cdf(v / sd)))
            .collect(),
    }
}

/// Margin layout across the indicators of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginDesign {
    Gaussian,
    Ordinal {
        categories: usize,
    },
    ChiSquared {
        df: f64,
    },
    /// First half of the factors chi-squared, second half ordinal.
    Mixed {
        df: f64,
        categories: usize,
    },
}

impl MarginDesign {
    pub fn margins(&self, structure: &MeasurementStructure) -> Vec<MarginSpec> {
        let k = structure.k();
        (0..structure.p())
            .map(|j| match *self {
                MarginDesign::Gaussian => MarginSpec::Gaussian,
                MarginDesign::Ordinal { categories } => MarginSpec::Ordinal { categories },
                MarginDesign::ChiSquared { df } => MarginSpec::ChiSquared { df },
                MarginDesign::Mixed { df, categories } => {
                    if structure.factor_of(j) < k / 2 {
                        MarginSpec::ChiSquared { df }
                    } else {
                        MarginSpec::Ordinal { categories }
                    }
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginDesign::Gaussian => Ok(()),
            MarginDesign::Ordinal { categories } => MarginSpec::Ordinal { categories }.validate(),
            MarginDesign::ChiSquared { df } => MarginSpec::ChiSquared { df }.validate(),
            MarginDesign::Mixed { df, categories } => {
                MarginSpec::ChiSquared { df }.validate()?;
                MarginSpec::Ordinal { categories }.validate()
            }
        }
    }
}

impl fmt::Display for MarginDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginDesign::Gaussian => write!(f, "gaussian"),
            MarginDesign::Ordinal { categories } => write!(f, "ordinal{categories}"),
            MarginDesign::ChiSquared { df } => write!(f, "chisq{df}"),
            MarginDesign::Mixed { df, categories } => {
                write!(f, "mixed_chisq{df}_ordinal{categories}")
            }
        }
    }
}

impl std::str::FromStr for MarginDesign {
    type Err = BgcfError;

    /// Inverse of `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || BgcfError::InvalidInput(format!("unknown margin design `{s}`"));
        let design = if s == "gaussian" {
            MarginDesign::Gaussian
        } else if let Some(rest) = s.strip_prefix("mixed_chisq") {
            let (df, c) = rest.split_once("_ordinal").ok_or_else(bad)?;
            MarginDesign::Mixed {
                df: df.parse().map_err(|_| bad())?,
                categories: c.parse().map_err(|_| bad())?,
            }
        } else if let Some(c) = s.strip_prefix("ordinal") {
            MarginDesign::Ordinal {
                categories: c.parse().map_err(|_| bad())?,
            }
        } else if let Some(df) = s.strip_prefix("chisq") {
            MarginDesign::ChiSquared {
                df: df.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        design.validate()?;
        Ok(design)
    }
}

/// MAR mask (`true` = observed): for every column pair `(2j, 2j + 1)`
/// (0-based), the second is missing where the first's latent value is below
/// `Phi^{-1}(2 beta)`.
pub fn inject_mar(z: &DMatrix<f64>, beta: f64) -> Result<DMatrix<bool>> {
    if !(0.0..=0.5).contains(&beta) {
        return Err(BgcfError::InvalidInput(format!(
            "MAR rate {beta} outside [0, 0.5]"
        )));
    }
    let (n, p) = z.shape();
    let threshold = dist::norm_quantile(2.0 * beta);
    let mut observed = DMatrix::from_element(n, p, true);
    for pair in 0..p / 2 {
        for i in 0..n {
            if z[(i, 2 * pair)] < threshold {
                observed[(i, 2 * pair + 1)] = false;
            }
        }
    }
    Ok(observed)
}

/// MCAR mask: every cell missing independently with probability `beta`.
pub fn inject_mcar<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    beta: f64,
    rng: &mut R,
) -> Result<DMatrix<bool>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(BgcfError::InvalidInput(format!(
            "MCAR rate {beta} outside [0, 1)"
        )));
    }
    Ok(DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() >= beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Missingness {
    None,
    Mar(f64),
    Mcar(f64),
}

impl Missingness {
    pub fn rate(&self) -> f64 {
        match *self {
            Missingness::None => 0.0,
            Missingness::Mar(b) | Missingness::Mcar(b) => b,
        }
    }
}

/// A generated replicate with its latent layer.
#[derive(Debug, Clone)]
pub struct Generated {
    pub eta: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub data: MixedDataset,
}

/// Draws latent data, applies margins with the population scale of each
/// column and masks cells according to `missing`.
pub fn generate<R: Rng + ?Sized>(
    params: &FactorModelParams,
    structure: &MeasurementStructure,
    n: usize,
    margins: &[MarginSpec],
    missing: Missingness,
    rng: &mut R,
) -> Result<Generated> {
    let p = structure.p();
    if margins.len() != p {
        return Err(BgcfError::InvalidInput(format!(
            "{} margins for {p} indicators",
            margins.len()
        )));
    }
    for m in margins {
        m.validate()?;
    }
    let (eta, z) = sample_latent(params, n, rng)?;
    let pop_var = params.implied_response_cov();
    let mut values = DMatrix::zeros(n, p);
    for j in 0..p {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let y = apply_margin(&col, pop_var[(j, j)].sqrt(), margins[j]);
        values.set_column(j, &DVector::from_vec(y));
    }
    let observed = match missing {
        Missingness::None => DMatrix::from_element(n, p, true),
        Missingness::Mar(beta) => inject_mar(&z, beta)?,
        Missingness::Mcar(beta) => inject_mcar(n, p, beta, rng)?,
    };
    for i in 0..n {
        for j in 0..p {
            if !observed[(i, j)] {
                values[(i, j)] = f64::NAN;
            }
        }
    }
    let columns = (0..p)
        .map(|j| Column {
            name: structure.indicator_names()[j].clone(),
            kind: margins[j].column_kind(),
        })
        .collect();
    let data = MixedDataset::new(columns, values, observed)?;
    Ok(Generated { eta, z, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_model_values() {
        let a = build_paper_model(1);
        let b = build_paper_model(2);
        assert_ne!(a.c(), b.c());
        assert_eq!(a.lambda(), b.lambda());
        assert_eq!(a.d(), b.d());
        assert!((1.0 - PAPER_LOADING * PAPER_LOADING - PAPER_RESIDUAL).abs() < 1e-15);
        for v in a.factor_correlations() {
            assert!((0.2..0.4).contains(&v));
        }
        assert!(a.is_standardized(1e-12));
    }

    #[test]
    fn latent_moments() {
        let params = build_paper_model(5);
        let mut rng = rng_from_seed(9);
        let (eta, z) = sample_latent(&params, 100_000, &mut rng).unwrap();
        let n = eta.nrows() as f64;
        let cov_eta = eta.transpose() * &eta / n;
        let corr = linalg::cov_to_corr(&cov_eta).unwrap();
        assert!((corr - params.c()).abs().max() < 0.02);
        for j in 0..16 {
            let v = z.column(j).norm_squared() / n;
            assert!((v - 1.0).abs() < 0.02, "var {v}");
        }
    }

    #[test]
    fn single_indicator_without_noise_copies_factor() {
        let s = MeasurementStructure::from_block_sizes(&[1]).unwrap();
        let params =
            FactorModelParams::from_loadings(DMatrix::identity(1, 1), &[1.0], &[0.0], &s).unwrap();
        let (eta, z) = sample_latent(&params, 50, &mut rng_from_seed(0)).unwrap();
        assert_eq!(eta, z);
    }

    #[test]
    fn ordinal_median_split() {
        let y = apply_margin(
            &[-0.3, -1e-12, 0.0, 2.0],
            1.0,
            MarginSpec::Ordinal { categories: 2 },
        );
        assert_eq!(y, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn ordinal_uses_equal_probability_cuts() {
        let mut rng = rng_from_seed(4);
        let z: Vec<f64> = (0..40_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let y = apply_margin(&z, 1.0, MarginSpec::Ordinal { categories: 4 });
        for c in 1..=4 {
            let share = y.iter().filter(|&&v| v == c as f64).count() as f64 / 40_000.0;
            assert!((share - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn chi_squared_shape() {
        let mut rng = rng_from_seed(8);
        let z: Vec<f64> = (0..100_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let y = apply_margin(&z, 1.0, MarginSpec::ChiSquared { df: 8.0 });
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let m2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = y.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        assert!((skew - 1.0).abs() < 0.05, "skew {skew}");
        assert!((kurt - 1.5).abs() < 0.2, "kurtosis {kurt}");
    }

    #[test]
    fn margins_are_monotone() {
        let z = [-2.0, -0.5, -0.5, 0.1, 0.3, 1.7];
        for m in [
            MarginSpec::Gaussian,
            MarginSpec::Ordinal { categories: 6 },
            MarginSpec::ChiSquared { df: 2.0 },
        ] {
            let y = apply_margin(&z, 1.0, m);
            assert!(y.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn mar_thresholds() {
        let mut rng = rng_from_seed(2);
        let z = DMatrix::from_fn(100_000, 2, |_, _| StandardNormal.sample(&mut rng));
        assert!(inject_mar(&z, 0.0).unwrap().iter().all(|&o| o));
        let half = inject_mar(&z, 0.25).unwrap();
        assert!(half.column(0).iter().all(|&o| o));
        let share = half.column(1).iter().filter(|&&o| !o).count() as f64 / 100_000.0;
        assert!((share - 0.5).abs() < 0.01);
        let tenth = inject_mar(&z, 0.10).unwrap();
        let share = tenth.column(1).iter().filter(|&&o| !o).count() as f64 / 100_000.0;
        assert!((share - 0.2).abs() < 0.01);
        for i in 0..1000 {
            assert_eq!(tenth[(i, 1)], z[(i, 0)] >= -0.841_621_233_572_914_3);
        }
    }

    #[test]
    fn mcar_rate() {
        let mut rng = rng_from_seed(3);
        assert!(inject_mcar(10, 10, 0.0, &mut rng)
            .unwrap()
            .iter()
            .all(|&o| o));
        let m = inject_mcar(1000, 100, 0.3, &mut rng).unwrap();
        let obs = m.iter().filter(|&&o| o).count() as f64 / 100_000.0;
        assert!((obs - 0.7).abs() < 0.01);
    }

    #[test]
    fn design_names_round_trip() {
        for d in [
            MarginDesign::Gaussian,
            MarginDesign::Ordinal { categories: 4 },
            MarginDesign::ChiSquared { df: 8.0 },
            MarginDesign::Mixed {
                df: 8.0,
                categories: 4,
            },
        ] {
            assert_eq!(d.to_string().parse::<MarginDesign>().unwrap(), d);
        }
        assert!("ordinal1".parse::<MarginDesign>().is_err());
    }

    #[test]
    fn mixed_design_splits_factors() {
        let m = MarginDesign::Mixed {
            df: 8.0,
            categories: 4,
        }
        .margins(&paper_structure());
        assert_eq!(m[7], MarginSpec::ChiSquared { df: 8.0 });
        assert_eq!(m[8], MarginSpec::Ordinal { categories: 4 });
    }

    #[test]
    fn generated_dataset_has_mask_and_kinds() {
        let params = build_paper_model(0);
        let s = paper_structure();
        let margins = MarginDesign::Mixed {
            df: 8.0,
            categories: 4,
        }
        .margins(&s);
        let g = generate(
            &params,
            &s,
            500,
            &margins,
            Missingness::Mar(0.1),
            &mut rng_from_seed(1),
        )
        .unwrap();
        assert_eq!(g.data.n(), 500);
        assert!(g.data.columns()[15].kind.is_ordinal());
        assert!(!g.data.columns()[0].kind.is_ordinal());
        assert!(g.data.missing_count() > 0);
        assert!((0..500).all(|i| g.data.is_observed(i, 0)));
    }
}
