//! Domain types of the copula factor model and the maps between parameters
//! `(C, Lambda, D)` and the joint correlation matrix over `(Z, eta)`.
//!
//! Matrix layout throughout: indicators occupy indices `0..p`, factors
//! `p..p+k`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{BgcfError, Result};
use crate::linalg;

/// Residuals in `(-CLAMP_TOL, 0)` are treated as rounding noise and set to zero.
pub const NEGATIVE_RESIDUAL_CLAMP: f64 = 1e-8;

const SINGLE_INDICATOR_TOLERANCE: f64 = 1e-6;

/// Pure measurement model: every indicator loads on exactly one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStructure {
    factor_names: Vec<String>,
    indicator_names: Vec<String>,
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl MeasurementStructure {
    /// Builds a structure from an indicator-to-factor map (0-based).
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        let factor_names = (1..=k).map(|q| format!("F{q}")).collect();
        let indicator_names = (1..=assignment.len()).map(|j| format!("Y{j}")).collect();
        Self::with_names(assignment, factor_names, indicator_names)
    }

    pub fn with_names(
        assignment: Vec<usize>,
        factor_names: Vec<String>,
        indicator_names: Vec<String>,
    ) -> Result<Self> {
        let k = factor_names.len();
        let p = assignment.len();
        if k == 0 {
            return Err(BgcfError::InvalidInput("structure has no factors".into()));
        }
        if indicator_names.len() != p {
            return Err(BgcfError::InvalidInput(format!(
                "{} indicator names for {p} indicators",
                indicator_names.len()
            )));
        }
        let mut members = vec![Vec::new(); k];
        for (j, &q) in assignment.iter().enumerate() {
            if q >= k {
                return Err(BgcfError::InvalidInput(format!(
                    "indicator {j} assigned to factor {q}, but only {k} factors exist"
                )));
            }
            members[q].push(j);
        }
        if let Some(q) = members.iter().position(|m| m.is_empty()) {
            return Err(BgcfError::InvalidInput(format!(
                "factor `{}` has no indicators",
                factor_names[q]
            )));
        }
        let mut seen = BTreeSet::new();
        for name in indicator_names.iter().chain(factor_names.iter()) {
            if !seen.insert(name.as_str()) {
                return Err(BgcfError::InvalidInput(format!("duplicate name `{name}`")));
            }
        }
        Ok(Self {
            factor_names,
            indicator_names,
            assignment,
            members,
        })
    }

    /// Consecutive blocks: `sizes[q]` indicators for factor `q`.
    pub fn from_block_sizes(sizes: &[usize]) -> Result<Self> {
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(q, &s)| std::iter::repeat_n(q, s))
            .collect();
        Self::new(assignment, sizes.len())
    }

    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn factor_of(&self, indicator: usize) -> usize {
        self.assignment[indicator]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Indicators of factor `q`, ascending.
    pub fn indicators_of(&self, q: usize) -> &[usize] {
        &self.members[q]
    }

    pub fn first_indicator(&self, q: usize) -> usize {
        self.members[q][0]
    }

    pub fn is_single_indicator(&self, q: usize) -> bool {
        self.members[q].len() == 1
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn indicator_names(&self) -> &[String] {
        &self.indicator_names
    }

    /// Index of the vertex of factor `q` in the joint layout.
    pub fn factor_vertex(&self, q: usize) -> usize {
        self.p() + q
    }
}

/// Interfactor correlations `C`, loadings `Lambda` and residual variances `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelParams {
    c: DMatrix<f64>,
    lambda: DMatrix<f64>,
    d: DVector<f64>,
}

impl FactorModelParams {
    /// Validates and wraps `(C, Lambda, D)` for `structure`.
    pub fn new(
        c: DMatrix<f64>,
        lambda: DMatrix<f64>,
        d: DVector<f64>,
        structure: &MeasurementStructure,
    ) -> Result<Self> {
        let (p, k) = (structure.p(), structure.k());
        if c.shape() != (k, k) || lambda.shape() != (p, k) || d.len() != p {
            return Err(BgcfError::InvalidInput(format!(
                "parameter shapes C {:?}, Lambda {:?}, D {} do not match p={p}, k={k}",
                c.shape(),
                lambda.shape(),
                d.len()
            )));
        }
        for q in 0..k {
            if (c[(q, q)] - 1.0).abs() > 1e-9 {
                return Err(BgcfError::InvalidInput(format!(
                    "C[{q},{q}] = {} is not 1",
                    c[(q, q)]
                )));
            }
            for r in 0..q {
                if (c[(q, r)] - c[(r, q)]).abs() > 1e-9 {
                    return Err(BgcfError::InvalidInput("C is not symmetric".into()));
                }
            }
        }
        if !linalg::is_positive_definite(&c) {
            return Err(BgcfError::NotPositiveDefinite(
                "interfactor correlation C".into(),
            ));
        }
        for j in 0..p {
            let q = structure.factor_of(j);
            for r in 0..k {
                if r != q && lambda[(j, r)] != 0.0 {
                    return Err(BgcfError::InvalidInput(format!(
                        "loading of indicator {j} on factor {r} violates the measurement structure"
                    )));
                }
            }
            if !d[j].is_finite() || d[j] < 0.0 {
                return Err(BgcfError::InvalidInput(format!(
                    "residual variance {} of indicator {j} is negative",
                    d[j]
                )));
            }
        }
        for q in 0..k {
            let first = structure.first_indicator(q);
            if !(lambda[(first, q)] > 0.0) {
                return Err(BgcfError::Degenerate(format!(
                    "first loading of factor `{}` is {} (must be positive)",
                    structure.factor_names()[q],
                    lambda[(first, q)]
                )));
            }
            if !structure.is_single_indicator(q) {
                for &j in structure.indicators_of(q) {
                    if d[j] == 0.0 {
                        return Err(BgcfError::Degenerate(format!(
                            "zero residual variance for indicator `{}` of multi-indicator factor",
                            structure.indicator_names()[j]
                        )));
                    }
                }
            } else if d[first] != 0.0 {
                return Err(BgcfError::InvalidInput(format!(
                    "single-indicator factor `{}` must have zero residual variance",
                    structure.factor_names()[q]
                )));
            }
        }
        Ok(Self { c, lambda, d })
    }

    /// Wraps parameters without validation; used for sampler draws, whose
    /// loadings are not sign-constrained.
    pub(crate) fn new_unchecked(c: DMatrix<f64>, lambda: DMatrix<f64>, d: DVector<f64>) -> Self {
        Self { c, lambda, d }
    }

    /// Builds parameters from one loading per indicator (on its own factor).
    pub fn from_loadings(
        c: DMatrix<f64>,
        loadings: &[f64],
        residuals: &[f64],
        structure: &MeasurementStructure,
    ) -> Result<Self> {
        let (p, k) = (structure.p(), structure.k());
        if loadings.len() != p || residuals.len() != p {
            return Err(BgcfError::InvalidInput(format!(
                "expected {p} loadings and residuals"
            )));
        }
        let mut lambda = DMatrix::zeros(p, k);
        for j in 0..p {
            lambda[(j, structure.factor_of(j))] = loadings[j];
        }
        Self::new(c, lambda, DVector::from_column_slice(residuals), structure)
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// The structural (non-zero) loading of each indicator.
    pub fn loadings(&self, structure: &MeasurementStructure) -> Vec<f64> {
        (0..structure.p())
            .map(|j| self.lambda[(j, structure.factor_of(j))])
            .collect()
    }

    /// Strict upper triangle of `C`, row-major.
    pub fn factor_correlations(&self) -> Vec<f64> {
        let k = self.c.nrows();
        let mut out = Vec::with_capacity(k * (k - 1) / 2);
        for q in 0..k {
            for r in q + 1..k {
                out.push(self.c[(q, r)]);
            }
        }
        out
    }

    /// `Lambda C Lambda^T + D`.
    pub fn implied_response_cov(&self) -> DMatrix<f64> {
        let mut s = &self.lambda * &self.c * self.lambda.transpose();
        for j in 0..self.d.len() {
            s[(j, j)] += self.d[j];
        }
        linalg::symmetrize(&s)
    }

    /// True when the implied response variances are all one.
    pub fn is_standardized(&self, tol: f64) -> bool {
        let s = self.implied_response_cov();
        (0..s.nrows()).all(|j| (s[(j, j)] - 1.0).abs() <= tol)
    }

    /// Precision matrix of `(Z, eta)` in block form, built without inversion so
    /// structural zeros are exact. Requires every `D` entry to be positive.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let (p, k) = self.lambda.shape();
        if let Some(j) = (0..p).find(|&j| !(self.d[j] > 0.0)) {
            return Err(BgcfError::Degenerate(format!(
                "precision undefined: residual variance of indicator {j} is zero"
            )));
        }
        let c_inv = linalg::spd_inverse(&self.c, "C")?;
        let mut omega = DMatrix::zeros(p + k, p + k);
        let mut lower_right = c_inv;
        for j in 0..p {
            let dinv = 1.0 / self.d[j];
            omega[(j, j)] = dinv;
            for q in 0..k {
                let v = -dinv * self.lambda[(j, q)];
                if v != 0.0 {
                    omega[(j, p + q)] = v;
                    omega[(p + q, j)] = v;
                }
            }
            for q in 0..k {
                for r in 0..k {
                    lower_right[(q, r)] += self.lambda[(j, q)] * dinv * self.lambda[(j, r)];
                }
            }
        }
        omega.view_mut((p, p), (k, k)).copy_from(&lower_right);
        Ok(omega)
    }
}

/// Correlation matrix over `X = (Z, eta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCorrelation {
    sigma: DMatrix<f64>,
    p: usize,
    k: usize,
}

impl JointCorrelation {
    /// Checks symmetry, unit diagonal and positive definiteness of the response
    /// and factor blocks. The full matrix may be singular when a factor has a
    /// single indicator (`Z_j = eta_q`).
    pub fn new(sigma: DMatrix<f64>, p: usize, k: usize) -> Result<Self> {
        let m = p + k;
        if sigma.shape() != (m, m) {
            return Err(BgcfError::InvalidInput(format!(
                "joint correlation must be {m}x{m}, got {:?}",
                sigma.shape()
            )));
        }
        for i in 0..m {
            if (sigma[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(BgcfError::InvalidInput(format!(
                    "diagonal entry {i} of joint correlation is {}",
                    sigma[(i, i)]
                )));
            }
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 {
                    return Err(BgcfError::InvalidInput(
                        "joint correlation not symmetric".into(),
                    ));
                }
            }
        }
        let out = Self { sigma, p, k };
        if !linalg::is_positive_definite(&out.response_block()) {
            return Err(BgcfError::NotPositiveDefinite(
                "response correlation block S".into(),
            ));
        }
        if !linalg::is_positive_definite(&out.factor_block()) {
            return Err(BgcfError::NotPositiveDefinite(
                "factor correlation block C".into(),
            ));
        }
        Ok(out)
    }

    pub(crate) fn new_unchecked(sigma: DMatrix<f64>, p: usize, k: usize) -> Self {
        Self { sigma, p, k }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Upper-left `p x p` block `S`.
    pub fn response_block(&self) -> DMatrix<f64> {
        self.sigma.view((0, 0), (self.p, self.p)).into_owned()
    }

    /// `Sigma[Z, eta]`, `p x k`.
    pub fn cross_block(&self) -> DMatrix<f64> {
        self.sigma.view((0, self.p), (self.p, self.k)).into_owned()
    }

    /// Lower-right `k x k` block `C`.
    pub fn factor_block(&self) -> DMatrix<f64> {
        self.sigma
            .view((self.p, self.p), (self.k, self.k))
            .into_owned()
    }

    pub fn is_positive_definite(&self) -> bool {
        linalg::is_positive_definite(&self.sigma)
    }

    /// Strict lower triangle, row-major: `(1,0), (2,0), (2,1), ...`.
    pub fn lower_triangle(&self) -> Vec<f64> {
        let m = self.p + self.k;
        let mut out = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in 0..i {
                out.push(self.sigma[(i, j)]);
            }
        }
        out
    }

    /// Element-wise mean of a non-empty set of draws.
    pub fn mean_of(draws: &[JointCorrelation]) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| BgcfError::InvalidInput("no draws to average".into()))?;
        let mut acc = DMatrix::zeros(first.sigma.nrows(), first.sigma.ncols());
        for d in draws {
            acc += &d.sigma;
        }
        acc /= draws.len() as f64;
        Ok(Self::new_unchecked(
            linalg::symmetrize(&acc),
            first.p,
            first.k,
        ))
    }
}

/// Undirected graph of the non-zero pattern of the joint precision matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecisionGraph {
    vertices: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl PrecisionGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.contains(&key)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }
}

/// Edges: indicator `j` with factor `f(j)`, and every pair of factors.
pub fn build_precision_graph(structure: &MeasurementStructure) -> PrecisionGraph {
    let (p, k) = (structure.p(), structure.k());
    let mut edges = BTreeSet::new();
    for j in 0..p {
        edges.insert((j, p + structure.factor_of(j)));
    }
    for q in 0..k {
        for r in q + 1..k {
            edges.insert((p + q, p + r));
        }
    }
    PrecisionGraph {
        vertices: p + k,
        edges,
    }
}

/// Result of [`assemble_sigma`].
#[derive(Debug, Clone)]
pub struct AssembledSigma {
    pub sigma: JointCorrelation,
    /// The implied response variances were not one and the covariance was
    /// rescaled to a correlation matrix.
    pub rescaled: bool,
    /// A single-indicator factor makes the joint matrix singular.
    pub rank_deficient: bool,
}

/// `[[Lambda C Lambda^T + D, Lambda C], [C Lambda^T, C]]`.
pub fn assemble_sigma(
    params: &FactorModelParams,
    structure: &MeasurementStructure,
) -> Result<AssembledSigma> {
    let (p, k) = (structure.p(), structure.k());
    let s = params.implied_response_cov();
    let cross = params.lambda() * params.c();
    let mut sigma = DMatrix::zeros(p + k, p + k);
    sigma.view_mut((0, 0), (p, p)).copy_from(&s);
    sigma.view_mut((0, p), (p, k)).copy_from(&cross);
    sigma.view_mut((p, 0), (k, p)).copy_from(&cross.transpose());
    sigma.view_mut((p, p), (k, k)).copy_from(params.c());
    let rescaled = !params.is_standardized(1e-12);
    if rescaled {
        log::warn!("implied response variances differ from one; rescaling to correlation");
        sigma = linalg::cov_to_corr(&sigma)?;
    }
    let rank_deficient = (0..k).any(|q| structure.is_single_indicator(q));
    Ok(AssembledSigma {
        sigma: JointCorrelation::new(sigma, p, k)?,
        rescaled,
        rank_deficient,
    })
}

/// Recovers `(C, Lambda, D)` from a (posterior-mean) joint correlation matrix.
///
/// Off-pattern loadings are set to exactly zero; residuals in
/// `(-1e-8, 0)` are clamped to zero, larger negative residuals are errors.
/// Single-indicator factors get loading one and residual zero.
pub fn extract_params(
    sigma_hat: &JointCorrelation,
    structure: &MeasurementStructure,
) -> Result<FactorModelParams> {
    let (p, k) = (structure.p(), structure.k());
    if sigma_hat.p() != p || sigma_hat.k() != k {
        return Err(BgcfError::InvalidInput(format!(
            "joint correlation is for p={}, k={}, structure has p={p}, k={k}",
            sigma_hat.p(),
            sigma_hat.k()
        )));
    }
    let c_hat = linalg::symmetrize(&sigma_hat.factor_block());
    for q in 0..k {
        for r in 0..k {
            if q != r && c_hat[(q, r)].abs() > 1.0 {
                return Err(BgcfError::Degenerate(format!(
                    "estimated interfactor correlation C[{q},{r}] = {} lies outside [-1, 1]",
                    c_hat[(q, r)]
                )));
            }
        }
    }
    let c_inv = linalg::spd_inverse(&c_hat, "estimated C")?;
    let full = sigma_hat.cross_block() * c_inv;
    let s_hat = sigma_hat.response_block();
    let mut lambda = DMatrix::zeros(p, k);
    for j in 0..p {
        let q = structure.factor_of(j);
        lambda[(j, q)] = if structure.is_single_indicator(q) {
            // The indicator is the factor; anything else is not a valid joint
            // matrix for this structure.
            if (full[(j, q)] - 1.0).abs() > SINGLE_INDICATOR_TOLERANCE {
                return Err(BgcfError::Degenerate(format!(
                    "single indicator `{}` has loading {} on its own factor (must be 1)",
                    structure.indicator_names()[j],
                    full[(j, q)]
                )));
            }
            1.0
        } else {
            full[(j, q)]
        };
    }
    let lcl = &lambda * &c_hat * lambda.transpose();
    let mut d = DVector::zeros(p);
    for j in 0..p {
        let q = structure.factor_of(j);
        if structure.is_single_indicator(q) {
            continue;
        }
        let v = s_hat[(j, j)] - lcl[(j, j)];
        d[j] = if v >= 0.0 {
            v
        } else if v > -NEGATIVE_RESIDUAL_CLAMP {
            0.0
        } else {
            return Err(BgcfError::NegativeResidual {
                indicator: structure.indicator_names()[j].clone(),
                value: v,
            });
        };
    }
    FactorModelParams::new(c_hat, lambda, d, structure)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// Identified only through correlations with other factors.
    Soft,
    /// Correlations with all other factors are (near) zero: underdetermined.
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationFlag {
    pub factor: usize,
    pub factor_name: String,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentificationReport {
    pub flags: Vec<IdentificationFlag>,
}

impl IdentificationReport {
    pub fn has_hard_warning(&self) -> bool {
        self.flags.iter().any(|f| f.severity == Severity::Hard)
    }
}

pub const DEFAULT_INDEPENDENCE_THRESHOLD: f64 = 1e-6;

/// Flags factors with exactly two indicators. When `c` is given, a flagged
/// factor whose correlations with all other factors are below `threshold` in
/// magnitude is escalated to a hard warning.
pub fn validate_structure(
    structure: &MeasurementStructure,
    c: Option<&DMatrix<f64>>,
    threshold: f64,
) -> IdentificationReport {
    let k = structure.k();
    let mut flags = Vec::new();
    for q in 0..k {
        if structure.indicators_of(q).len() != 2 {
            continue;
        }
        let name = structure.factor_names()[q].clone();
        let isolated = c.map(|c| {
            (0..k)
                .filter(|&r| r != q)
                .all(|r| c[(q, r)].abs() < threshold)
        });
        let (severity, message) = match isolated {
            Some(true) => (
                Severity::Hard,
                format!(
                    "factor `{name}` has two indicators and is uncorrelated with every other factor: \
                     4 free parameters, 3 equations"
                ),
            ),
            _ => (
                Severity::Soft,
                format!(
                    "factor `{name}` has two indicators; loadings and residuals are identified only \
                     through its correlation with other factors"
                ),
            ),
        };
        flags.push(IdentificationFlag {
            factor: q,
            factor_name: name,
            severity,
            message,
        });
    }
    IdentificationReport { flags }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_structure() -> MeasurementStructure {
        MeasurementStructure::from_block_sizes(&[4, 4, 4, 4]).unwrap()
    }

    fn paper_like_params(structure: &MeasurementStructure) -> FactorModelParams {
        let c = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.25, 0.30, 0.35, //
                0.25, 1.0, 0.22, 0.38, //
                0.30, 0.22, 1.0, 0.27, //
                0.35, 0.38, 0.27, 1.0,
            ],
        );
        FactorModelParams::from_loadings(c, &[0.7; 16], &[0.51; 16], structure).unwrap()
    }

    #[test]
    fn rejects_empty_factor() {
        assert!(MeasurementStructure::new(vec![0, 0, 2], 3).is_err());
        assert!(MeasurementStructure::new(vec![0, 3], 2).is_err());
    }

    #[test]
    fn graph_smallest_model() {
        let s = MeasurementStructure::new(vec![0], 1).unwrap();
        let g = build_precision_graph(&s);
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn graph_two_by_two() {
        let s = MeasurementStructure::new(vec![0, 1], 2).unwrap();
        let g = build_precision_graph(&s);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn graph_paper_design_counts() {
        let s = paper_structure();
        let g = build_precision_graph(&s);
        let indicator_factor = g.edges().filter(|&(a, b)| a < 16 && b >= 16).count();
        let factor_factor = g.edges().filter(|&(a, _)| a >= 16).count();
        let indicator_indicator = g.edges().filter(|&(_, b)| b < 16).count();
        assert_eq!(
            (indicator_factor, factor_factor, indicator_indicator),
            (16, 6, 0)
        );
    }

    #[test]
    fn assemble_single_indicator_is_flagged_not_rejected() {
        let s = MeasurementStructure::new(vec![0], 1).unwrap();
        let params =
            FactorModelParams::from_loadings(DMatrix::identity(1, 1), &[1.0], &[0.0], &s).unwrap();
        let a = assemble_sigma(&params, &s).unwrap();
        assert!(a.rank_deficient);
        assert!(!a.rescaled);
        assert_eq!(a.sigma.matrix(), &DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn assemble_one_factor_two_indicators() {
        let s = MeasurementStructure::new(vec![0, 0], 1).unwrap();
        let params = FactorModelParams::from_loadings(
            DMatrix::identity(1, 1),
            &[0.7, 0.7],
            &[0.51, 0.51],
            &s,
        )
        .unwrap();
        let a = assemble_sigma(&params, &s).unwrap();
        let m = a.sigma.matrix();
        assert!((m[(0, 1)] - 0.49).abs() < 1e-15);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m[(0, 2)] - 0.7).abs() < 1e-15);
        assert!((m[(1, 2)] - 0.7).abs() < 1e-15);
        assert!(!a.rank_deficient);
    }

    #[test]
    fn assemble_between_factor_covariances() {
        let s = paper_structure();
        let params = paper_like_params(&s);
        let a = assemble_sigma(&params, &s).unwrap();
        let m = a.sigma.matrix();
        for i in 0..16 {
            for j in 0..16 {
                let (q, r) = (s.factor_of(i), s.factor_of(j));
                if q != r {
                    assert!((m[(i, j)] - 0.49 * params.c()[(q, r)]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn extract_recovers_paper_values() {
        let s = paper_structure();
        let params = paper_like_params(&s);
        let a = assemble_sigma(&params, &s).unwrap();
        let back = extract_params(&a.sigma, &s).unwrap();
        for l in back.loadings(&s) {
            assert!((l - 0.7).abs() < 1e-12);
        }
        for d in back.d().iter() {
            assert!((d - 0.51).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_identity_is_degenerate() {
        let s = MeasurementStructure::new(vec![0, 1], 2).unwrap();
        let sigma = JointCorrelation::new(DMatrix::identity(4, 4), 2, 2).unwrap();
        assert!(matches!(
            extract_params(&sigma, &s),
            Err(BgcfError::Degenerate(_))
        ));
    }

    #[test]
    fn extract_rejects_out_of_range_correlation() {
        // Build a matrix whose factor block is not a valid correlation; the
        // constructor refuses it, so exercise the range check via new_unchecked.
        let s = MeasurementStructure::new(vec![0, 0, 1, 1], 2).unwrap();
        let mut m = DMatrix::identity(6, 6);
        m[(4, 5)] = 1.2;
        m[(5, 4)] = 1.2;
        let sigma = JointCorrelation::new_unchecked(m, 4, 2);
        assert!(extract_params(&sigma, &s).is_err());
    }

    #[test]
    fn extract_rejects_large_negative_residual() {
        let s = MeasurementStructure::new(vec![0, 0, 0], 1).unwrap();
        // Cross-block loadings 1.05 imply d = 1 - 1.1025 < 0.
        let mut m = DMatrix::from_element(4, 4, 0.9);
        for i in 0..4 {
            m[(i, i)] = 1.0;
        }
        for j in 0..3 {
            m[(j, 3)] = 0.999;
            m[(3, j)] = 0.999;
        }
        m[(0, 3)] = 1.05;
        m[(3, 0)] = 1.05;
        let sigma = JointCorrelation::new_unchecked(m, 3, 1);
        match extract_params(&sigma, &s) {
            Err(BgcfError::NegativeResidual { value, .. }) => assert!(value < -0.1),
            other => panic!("expected negative residual, got {other:?}"),
        }
    }

    #[test]
    fn precision_zeros_match_graph() {
        let s = paper_structure();
        let params = paper_like_params(&s);
        let omega = params.precision().unwrap();
        let g = build_precision_graph(&s);
        for a in 0..20 {
            for b in 0..a {
                assert_eq!(omega[(a, b)] != 0.0, g.has_edge(a, b), "({a},{b})");
            }
        }
        let sigma = assemble_sigma(&params, &s).unwrap().sigma;
        let prod = sigma.matrix() * &omega;
        assert!(linalg::max_abs_diff(&prod, &DMatrix::identity(20, 20)) < 1e-10);
    }

    #[test]
    fn validate_structure_cases() {
        let s = paper_structure();
        assert!(validate_structure(&s, None, DEFAULT_INDEPENDENCE_THRESHOLD)
            .flags
            .is_empty());

        let s = MeasurementStructure::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        let c0 = DMatrix::identity(2, 2);
        let report = validate_structure(&s, Some(&c0), DEFAULT_INDEPENDENCE_THRESHOLD);
        assert_eq!(report.flags.len(), 1);
        assert_eq!(report.flags[0].severity, Severity::Hard);
        assert!(report.flags[0].message.contains("F1"));

        let c1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let report = validate_structure(&s, Some(&c1), DEFAULT_INDEPENDENCE_THRESHOLD);
        assert_eq!(report.flags[0].severity, Severity::Soft);
        assert!(!report.has_hard_warning());
    }
}
