//! Bayesian inference for Gaussian copula factor models on mixed
//! continuous/ordinal data with missing values.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod data;
pub mod datagen;
pub mod dist;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod identify;
pub mod io;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod rng;

pub use data::{Column, ColumnKind, MixedDataset};
pub use error::{BgcfError, Result};
pub use gibbs::{run_chain, ChainConfig, GibbsSampler, PosteriorSummary, PriorSpec};
pub use model::{
    assemble_sigma, build_precision_graph, extract_params, validate_structure, FactorModelParams,
    JointCorrelation, MeasurementStructure, PrecisionGraph, DEFAULT_INDEPENDENCE_THRESHOLD,
};
