//! Multi-equation panel regression with spatial-error and AR(1) residuals
//! driven by cross-equation correlated Gaussian innovations.
//!
//! For equation `j` and period `t` the residual vector `u[t, j]` over
//! countries satisfies
//!
//! ```text
//! u[t, j] = λ_j W_t u[t, j] + φ_j u[t-1, j] + e[t, j]
//! ```
//!
//! with `u` before the first period set to zero and `e[i, t, ·] ~ N(0, Σ)`
//! independent across (country, period).

mod design;
mod fit;
mod likelihood;
mod optim;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use design::{assemble_design, DesignMatrices, DroppedObservation, REGRESSOR_SCALE};
pub use fit::{fit, Coefficient, Convergence, FitOptions, FitResult, FitStatistics};
pub use likelihood::{log_likelihood, ErrorParams, FullParameters, Model};
pub use optim::{maximize, OptimOutcome, OptimSettings};
pub use stats::{fit_statistics, p_value, stars};

/// Which cultural regressors enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorSet {
    /// Static national Hofstede scores repeated over periods.
    HofstedeOnly,
    /// Cultural level indicators.
    LevelOnly,
    /// Cultural level and diversity indicators.
    LevelAndDiversity,
}

impl RegressorSet {
    pub const ALL: [RegressorSet; 3] = [
        RegressorSet::HofstedeOnly,
        RegressorSet::LevelOnly,
        RegressorSet::LevelAndDiversity,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            RegressorSet::HofstedeOnly => "hofstede",
            RegressorSet::LevelOnly => "level",
            RegressorSet::LevelAndDiversity => "level_diversity",
        }
    }

    /// Row label in the model-comparison tables.
    pub fn title(self) -> &'static str {
        match self {
            RegressorSet::HofstedeOnly => "Hofstede's Cultural Dimensions",
            RegressorSet::LevelOnly => "Heterogeneous Level",
            RegressorSet::LevelAndDiversity => "Heterogeneous Level and Diversity",
        }
    }
}

impl FromStr for RegressorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "hofstede" | "hofstede_only" => Ok(RegressorSet::HofstedeOnly),
            "level" | "level_only" => Ok(RegressorSet::LevelOnly),
            "level_diversity" | "level_and_diversity" => Ok(RegressorSet::LevelAndDiversity),
            other => Err(Error::Config(format!("unknown regressor set `{other}`"))),
        }
    }
}

impl fmt::Display for RegressorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

/// Error-structure variants, from fully independent innovations to the
/// complete spatial + serial + SUR model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorStructure {
    Independent,
    Spatial,
    Serial,
    Sur,
    All,
}

impl ErrorStructure {
    pub const ALL: [ErrorStructure; 5] = [
        ErrorStructure::Independent,
        ErrorStructure::Spatial,
        ErrorStructure::Serial,
        ErrorStructure::Sur,
        ErrorStructure::All,
    ];

    pub fn spatial(self) -> bool {
        matches!(self, ErrorStructure::Spatial | ErrorStructure::All)
    }

    pub fn serial(self) -> bool {
        matches!(self, ErrorStructure::Serial | ErrorStructure::All)
    }

    /// Unrestricted cross-equation covariance.
    pub fn full_covariance(self) -> bool {
        matches!(self, ErrorStructure::Sur | ErrorStructure::All)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            ErrorStructure::Independent => "independent",
            ErrorStructure::Spatial => "spatial",
            ErrorStructure::Serial => "serial",
            ErrorStructure::Sur => "sur",
            ErrorStructure::All => "all",
        }
    }

    /// Column label in the model-comparison tables.
    pub fn title(self) -> &'static str {
        match self {
            ErrorStructure::Independent => "Indep.",
            ErrorStructure::Spatial => "Spatial",
            ErrorStructure::Serial => "Serial",
            ErrorStructure::Sur => "SUR",
            ErrorStructure::All => "All",
        }
    }
}

impl FromStr for ErrorStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ErrorStructure::ALL
            .into_iter()
            .find(|e| e.cli_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown error structure `{s}`")))
    }
}

impl fmt::Display for ErrorStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub regressors: RegressorSet,
    pub errors: ErrorStructure,
}

impl ModelSpec {
    pub fn new(regressors: RegressorSet, errors: ErrorStructure) -> Self {
        ModelSpec { regressors, errors }
    }
}
