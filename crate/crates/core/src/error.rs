use thiserror::Error;

/// Errors raised by model construction, sampling, fitting and I/O.
#[derive(Debug, Error)]
pub enum BgcfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error ({context}): {message}")]
    Parse { context: String, message: String },

    #[error("column `{column}` has fewer than two distinct observed values")]
    DegenerateColumn { column: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("factor `{factor}` is isolated and has exactly two indicators; loadings and residuals are underdetermined")]
    Underdetermined { factor: String },

    #[error("negative residual variance {value:.3e} for indicator `{indicator}`")]
    NegativeResidual { indicator: String, value: f64 },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error(
        "optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})"
    )]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BgcfError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BgcfError::NotPositiveDefinite(_)
                | BgcfError::NegativeResidual { .. }
                | BgcfError::Degenerate(_)
                | BgcfError::NonConvergence { .. }
                | BgcfError::Numerical(_)
        )
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        BgcfError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BgcfError>;
