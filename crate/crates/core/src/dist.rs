//! Scalar and matrix distributions used by the sampler and the generators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, Open01, StandardNormal};
use statrs::distribution::{ChiSquared as ChiSquaredLaw, ContinuousCDF};
use statrs::function::erf;

use crate::error::{BgcfError, Result};
use crate::linalg;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile; `0 -> -inf`, `1 -> +inf`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

pub fn chi_squared_quantile(df: f64, p: f64) -> f64 {
    // df is validated by the caller (MarginSpec).
    ChiSquaredLaw::new(df)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws from `Normal(mu, sigma^2)` truncated to `(lo, hi)` by inverting the CDF.
///
/// Intervals lying entirely in the upper tail are reflected into the lower
/// tail so the CDF differences keep their precision.
pub fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let (a, b, flip) = if a > 0.0 {
        (-b, -a, true)
    } else {
        (a, b, false)
    };
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    let u: f64 = Open01.sample(rng);
    let x = if pb > pa {
        norm_quantile(pa + (pb - pa) * u)
    } else {
        // Interval narrower than the CDF resolution.
        if a.is_finite() {
            a
        } else {
            b
        }
    };
    let x = x.clamp(a, b);
    let x = if flip { -x } else { x };
    mu + sigma * x
}

/// `InverseGamma(shape, scale)` drawn as the reciprocal of a gamma variate.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| BgcfError::Numerical(format!("inverse-gamma({shape}, {scale}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// `Wishart(dof, scale)` via the Bartlett decomposition.
pub fn wishart<R: Rng + ?Sized>(
    rng: &mut R,
    dof: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = scale.nrows();
    if dof <= k as f64 - 1.0 {
        return Err(BgcfError::InvalidInput(format!(
            "Wishart degrees of freedom {dof} must exceed dimension - 1 = {}",
            k as f64 - 1.0
        )));
    }
    let l = linalg::cholesky_lower(scale, "Wishart scale")?;
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| BgcfError::Numerical(format!("chi-squared({}): {e}", dof - i as f64)))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = l * a;
    Ok(linalg::symmetrize(&(&la * la.transpose())))
}

/// `InverseWishart(dof, scale)`: the inverse of a `Wishart(dof, scale^{-1})` draw.
pub fn inverse_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    dof: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let scale_inv = linalg::spd_inverse(scale, "inverse-Wishart scale")?;
    let w = wishart(rng, dof, &scale_inv)?;
    linalg::spd_inverse(&w, "Wishart draw")
}
