//! Closed-form recovery of `(C, Lambda, D)` from a noiseless response
//! correlation matrix.
//!
//! Loadings come from triads: for indicator `i` on factor `q`, a second
//! indicator `j` on `q` and any third indicator `l` correlated with `j`,
//! `lambda_i^2 = s_ij s_il / s_jl`. Signs follow the first indicator, whose
//! loading is positive by convention. Interfactor correlations are
//! `s_ab / (lambda_a lambda_b)` on the first indicators, or exactly zero when
//! the whole off-diagonal block vanishes.

use nalgebra::DMatrix;

use crate::error::{BgcfError, Result};
use crate::model::{FactorModelParams, MeasurementStructure};

/// Off-diagonal blocks with max-abs below this are treated as zero.
pub const ZERO_BLOCK_TOLERANCE: f64 = 1e-9;

/// Accepted reconstruction error of [`recover_from_s`].
pub const RECOVERY_TOLERANCE: f64 = 1e-8;

/// Unvalidated result of the triad formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecovery {
    pub c: DMatrix<f64>,
    pub loadings: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Exact recovery for a correlation matrix that factors under `structure`.
pub fn recover_from_s(
    s: &DMatrix<f64>,
    structure: &MeasurementStructure,
) -> Result<FactorModelParams> {
    let raw = recover_raw(s, structure)?;
    let mut residuals = raw.residuals.clone();
    for (j, r) in residuals.iter_mut().enumerate() {
        if *r < 0.0 {
            if *r > -RECOVERY_TOLERANCE {
                *r = 0.0;
            } else {
                return Err(BgcfError::NegativeResidual {
                    indicator: structure.indicator_names()[j].clone(),
                    value: *r,
                });
            }
        }
    }
    let params = FactorModelParams::from_loadings(raw.c, &raw.loadings, &residuals, structure)?;
    let err = decomposition_residual(s, &params);
    if !(err <= RECOVERY_TOLERANCE) {
        return Err(BgcfError::InvalidInput(format!(
            "matrix does not decompose under the structure (max residual {err:.3e})"
        )));
    }
    Ok(params)
}

/// Triad formulas without the final validation. Applied to a noisy sample
/// correlation this gives rough starting values; the result may have
/// negative residuals or an indefinite `C`.
pub fn recover_raw(s: &DMatrix<f64>, structure: &MeasurementStructure) -> Result<RawRecovery> {
    let (p, k) = (structure.p(), structure.k());
    if s.shape() != (p, p) {
        return Err(BgcfError::InvalidInput(format!(
            "matrix is {:?}, structure has {p} indicators",
            s.shape()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(BgcfError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    let block_zero = |q: usize, r: usize| {
        structure.indicators_of(q).iter().all(|&a| {
            structure
                .indicators_of(r)
                .iter()
                .all(|&b| s[(a, b)].abs() < ZERO_BLOCK_TOLERANCE)
        })
    };
    for q in 0..k {
        if structure.indicators_of(q).len() == 2 && (0..k).all(|r| r == q || block_zero(q, r)) {
            return Err(BgcfError::Underdetermined {
                factor: structure.factor_names()[q].clone(),
            });
        }
    }

    let mut loadings = vec![0.0; p];
    for q in 0..k {
        let members = structure.indicators_of(q);
        if members.len() == 1 {
            loadings[members[0]] = 1.0;
            continue;
        }
        let first = members[0];
        for &i in members {
            let sq = triad(s, structure, i)?;
            let magnitude = sq.max(0.0).sqrt();
            loadings[i] = if i == first || s[(i, first)] >= 0.0 {
                magnitude
            } else {
                -magnitude
            };
        }
        if !(loadings[first] > 0.0) {
            return Err(BgcfError::Degenerate(format!(
                "first loading of factor `{}` is zero",
                structure.factor_names()[q]
            )));
        }
    }

    let mut c = DMatrix::identity(k, k);
    for q in 0..k {
        for r in q + 1..k {
            let v = if block_zero(q, r) {
                0.0
            } else {
                let a = structure.first_indicator(q);
                let b = structure.first_indicator(r);
                s[(a, b)] / (loadings[a] * loadings[b])
            };
            c[(q, r)] = v;
            c[(r, q)] = v;
        }
    }

    let residuals = (0..p)
        .map(|j| {
            if structure.is_single_indicator(structure.factor_of(j)) {
                0.0
            } else {
                s[(j, j)] - loadings[j] * loadings[j]
            }
        })
        .collect();
    Ok(RawRecovery {
        c,
        loadings,
        residuals,
    })
}

/// `s_ij s_il / s_jl` for the first usable `(j, l)`: `j` shares `i`'s factor,
/// `l` is another same-factor indicator or, failing that, any cross-factor
/// indicator with `s_jl` non-zero.
fn triad(s: &DMatrix<f64>, structure: &MeasurementStructure, i: usize) -> Result<f64> {
    let q = structure.factor_of(i);
    let same: Vec<usize> = structure
        .indicators_of(q)
        .iter()
        .copied()
        .filter(|&j| j != i)
        .collect();
    let cross = (0..structure.p()).filter(|&l| structure.factor_of(l) != q);
    let thirds: Vec<usize> = same.iter().copied().chain(cross).collect();
    for &j in &same {
        for &l in &thirds {
            if l == j || s[(j, l)].abs() < ZERO_BLOCK_TOLERANCE {
                continue;
            }
            return Ok(s[(i, j)] * s[(i, l)] / s[(j, l)]);
        }
    }
    // Every partner of i is uncorrelated with everything usable: the loading
    // of i is only pinned down when it is itself zero.
    if same.iter().all(|&j| s[(i, j)].abs() < ZERO_BLOCK_TOLERANCE) {
        return Ok(0.0);
    }
    Err(BgcfError::Underdetermined {
        factor: structure.factor_names()[q].clone(),
    })
}

/// Max-abs entry of `S - (Lambda C Lambda^T + D)`.
pub fn decomposition_residual(s: &DMatrix<f64>, params: &FactorModelParams) -> f64 {
    let implied = params.implied_response_cov();
    if implied.shape() != s.shape() {
        return f64::INFINITY;
    }
    (s - implied).abs().max()
}
