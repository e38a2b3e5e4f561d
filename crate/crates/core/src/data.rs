//! Mixed continuous/ordinal data with a missingness mask.

use nalgebra::DMatrix;

use crate::error::{BgcfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Continuous,
    /// Ordered levels, lowest first. `labels[i]` is the text form of
    /// `values[i]` as it appears in files.
    Ordinal {
        labels: Vec<String>,
        values: Vec<f64>,
    },
}

impl ColumnKind {
    /// Ordinal column whose labels are the decimal forms of `values`.
    pub fn ordinal_from_values(values: Vec<f64>) -> Self {
        let labels = values.iter().map(|v| format!("{v}")).collect();
        ColumnKind::Ordinal { labels, values }
    }

    /// Ordinal column from labels; a label's numeric value is its parse as a
    /// number, or its 1-based position when it is not numeric.
    pub fn ordinal_from_labels(labels: Vec<String>) -> Self {
        let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
        let values = numeric.unwrap_or_else(|| (1..=labels.len()).map(|i| i as f64).collect());
        ColumnKind::Ordinal { labels, values }
    }

    pub fn is_ordinal(&self) -> bool {
        matches!(self, ColumnKind::Ordinal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// `n x p` table of observed values with per-column type and mask
/// (`observed[(i, j)] == true` where `y_ij` was recorded).
///
/// Besides the numeric value, every cell carries a rank key that orders the
/// column: the value itself for continuous columns, the level position for
/// ordinal ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    columns: Vec<Column>,
    values: DMatrix<f64>,
    rank_keys: DMatrix<f64>,
    observed: DMatrix<bool>,
}

impl MixedDataset {
    /// Validates the table. Missing cells may hold any value (conventionally
    /// NaN); they are ignored.
    pub fn new(
        columns: Vec<Column>,
        values: DMatrix<f64>,
        observed: DMatrix<bool>,
    ) -> Result<Self> {
        let (n, p) = values.shape();
        if columns.len() != p || observed.shape() != (n, p) {
            return Err(BgcfError::InvalidInput(format!(
                "dataset shape mismatch: {} columns, values {:?}, mask {:?}",
                columns.len(),
                values.shape(),
                observed.shape()
            )));
        }
        let mut rank_keys = DMatrix::from_element(n, p, f64::NAN);
        for (j, col) in columns.iter().enumerate() {
            let mut distinct: Vec<f64> = Vec::new();
            for i in 0..n {
                if !observed[(i, j)] {
                    continue;
                }
                let v = values[(i, j)];
                if !v.is_finite() {
                    return Err(BgcfError::InvalidInput(format!(
                        "non-finite observed value in column `{}`, row {i}",
                        col.name
                    )));
                }
                let key = match &col.kind {
                    ColumnKind::Continuous => v,
                    ColumnKind::Ordinal { values: levels, .. } => {
                        levels.iter().position(|&l| l == v).ok_or_else(|| {
                            BgcfError::InvalidInput(format!(
                                "value {v} in ordinal column `{}` is not a declared level",
                                col.name
                            ))
                        })? as f64
                    }
                };
                rank_keys[(i, j)] = key;
                if distinct.len() < 2 && !distinct.contains(&key) {
                    distinct.push(key);
                }
            }
            if distinct.len() < 2 {
                return Err(BgcfError::DegenerateColumn {
                    column: col.name.clone(),
                });
            }
        }
        Ok(Self {
            columns,
            values,
            rank_keys,
            observed,
        })
    }

    /// Complete continuous data.
    pub fn continuous(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        let columns = names
            .into_iter()
            .map(|name| Column {
                name,
                kind: ColumnKind::Continuous,
            })
            .collect();
        Self::new(columns, values, DMatrix::from_element(n, p, true))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rank_keys(&self) -> &DMatrix<f64> {
        &self.rank_keys
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Observed values of column `j`.
    pub fn observed_column(&self, j: usize) -> Vec<f64> {
        (0..self.n())
            .filter(|&i| self.observed[(i, j)])
            .map(|i| self.values[(i, j)])
            .collect()
    }

    /// Rows `rows` (in that order) as a new, re-validated dataset.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.p();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        let observed = DMatrix::from_fn(rows.len(), p, |i, j| self.observed[(rows[i], j)]);
        Self::new(self.columns.clone(), values, observed)
    }

    /// Rows observed in every column.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| (0..self.p()).all(|j| self.observed[(i, j)]))
            .collect()
    }
}
