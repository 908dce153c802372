//! Heterogeneous-culture indicators built from migrant stocks and Hofstede
//! scores, and a multi-equation governance regression whose errors may be
//! spatially and serially dependent. Fitted by maximum likelihood.

// Index loops mirror the formulas; negated comparisons also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod impute;
pub mod indicators;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod simulate;
pub mod types;

pub use error::{Error, Result};
pub use estimator::{
    assemble_design, fit, fit_statistics, log_likelihood, Coefficient, Convergence, DesignMatrices, ErrorParams,
    ErrorStructure, FitOptions, FitResult, FitStatistics, ModelSpec, OptimSettings, RegressorSet,
};
pub use impute::{impute_hofstede, redistribute_unknown, ImputedHofstedeTable, Provenance, DEFAULT_NEIGHBORS};
pub use indicators::{build_weights, compute_cdi, compute_cli, compute_indicators, IndicatorPanel, SpatialWeights};
pub use ingest::{
    build_observation_grid, load_hofstede, load_migrant_stock, load_panel, Country, CountryPanel, CountryRegistry,
    HofstedeTable, MigrantStockTensor, ObservationGrid,
};
pub use simulate::{simulate_panel, SimulationConfig, WeightScheme, WorldConfig};
pub use types::{CountryCode, Dimension, Governance};
