//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{BgcfError, Result};

/// Copies the sub-matrix with the given row and column indices.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Lower Cholesky factor, or an error naming `what`.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| BgcfError::NotPositiveDefinite(what.to_string()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols() && m.clone().cholesky().is_some()
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| BgcfError::NotPositiveDefinite(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| BgcfError::NotPositiveDefinite(what.to_string()))?;
    Ok(chol.solve(rhs))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `D^{-1/2} m D^{-1/2}` with `D = diag(m)`.
pub fn cov_to_corr(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let v = m[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(BgcfError::Numerical(format!(
                "non-positive variance {v} at index {i} while rescaling to correlation"
            )));
        }
        sd.push(v.sqrt());
    }
    let mut out = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (sd[i] * sd[j]));
    for i in 0..n {
        out[(i, i)] = 1.0;
    }
    Ok(symmetrize(&out))
}

/// A factor `F` with `F F^T = m` for symmetric positive semi-definite `m`.
///
/// Tries Cholesky first; falls back to an eigen square root when the matrix is
/// singular, clamping eigenvalues in `[-tol, 0)` to zero.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(BgcfError::NotPositiveDefinite(format!(
            "{what} (smallest eigenvalue {min:.3e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let l = cholesky_lower(m, what)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corr_rescale_has_unit_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]);
        let c = cov_to_corr(&m).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert!((c[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn psd_factor_handles_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = psd_factor(&m, 1e-10, "test").unwrap();
        assert!(max_abs_diff(&(&f * f.transpose()), &m) < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_factor(&bad, 1e-10, "test").is_err());
    }
}
