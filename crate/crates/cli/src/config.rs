//! Run configuration, read from TOML.
//!
//! ```toml
//! [grid]
//! horizon = 1.0
//! steps = 64
//!
//! [ensemble]
//! paths = 50000
//! seed = 1
//! model = "natural"            # or "enlarged-brownian", "initial-enlargement"
//! # xi = { law = "normal", mean = 0.0, std = 1.0 }   # initial-enlargement only
//! # cache = "ensemble.bin"
//!
//! [problem]
//! terminal = "w(T)^2"
//! terminal_params = { scale = 1.0 }
//! driver = "affine"
//! driver_params = { a = 0.1 }
//!
//! [basis]
//! cell_size = 4
//! state_degree = 1
//! family = "current-state"
//!
//! [linear.regression]
//! degree = 3
//! ridge = { relative = 1e-8 }
//!
//! [picard]
//! tolerance = 1e-9
//! theta = 0.5
//!
//! [verification]
//! n_tests = 20
//! seed = 7
//! ```
//!
//! Optional `[comparison]`, `[consistency]` and `[sweep]` tables configure the
//! corresponding subcommands. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use bsde_core::basis::standard_basis_families;
use bsde_core::driver::standard_drivers;
use bsde_core::ensemble::{FiltrationModel, XiLaw};
use bsde_core::registry::Params;
use bsde_core::terminal::standard_terminals;
use bsde_core::verification::{RefinementSpec, TestSuiteSpec};
use bsde_core::{LinearSpec, PicardConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub linear: LinearSpec,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<RefinementSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub steps: usize,
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Natural,
    EnlargedBrownian,
    InitialEnlargement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<XiLaw>,
    /// Load the ensemble from this file if it exists, otherwise simulate and save it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

fn default_model() -> ModelName {
    ModelName::Natural
}

impl EnsembleConfig {
    pub fn filtration(&self) -> Result<FiltrationModel, CliError> {
        match (self.model, self.xi) {
            (ModelName::Natural, None) => Ok(FiltrationModel::Natural),
            (ModelName::EnlargedBrownian, None) => Ok(FiltrationModel::EnlargedBrownian),
            (ModelName::InitialEnlargement, Some(xi)) => Ok(FiltrationModel::InitialEnlargement { xi }),
            (ModelName::InitialEnlargement, None) => Err(CliError::field("ensemble.xi", "initial-enlargement needs a law for xi")),
            (_, Some(_)) => Err(CliError::field("ensemble.xi", "only the initial-enlargement model takes a law for xi")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub terminal: String,
    #[serde(default)]
    pub terminal_params: Params,
    #[serde(default = "default_driver")]
    pub driver: String,
    #[serde(default)]
    pub driver_params: Params,
}

fn default_driver() -> String {
    "zero".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub cell_size: usize,
    pub state_degree: usize,
    pub family: String,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            state_degree: 1,
            family: "current-state".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    #[serde(flatten)]
    pub tests: TestSuiteSpec,
    /// Also run every test with `v = 0`.
    pub pseudo: bool,
    /// Re-run the tests against `Y + 1`, which must be caught.
    pub sentinel: bool,
    /// Orthogonality of the non-representable part to `∫ 1 dw`.
    pub orthogonality: bool,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            tests: TestSuiteSpec::default(),
            pseudo: true,
            sentinel: true,
            orthogonality: true,
        }
    }
}

/// The lower problem `(f̄, ȳ_T)` of a comparison; `[problem]` is the upper one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub terminal: String,
    #[serde(default)]
    pub terminal_params: Params,
    #[serde(default = "default_driver")]
    pub driver: String,
    #[serde(default)]
    pub driver_params: Params,
    /// Defaults to the bias tolerance of the two solves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Defaults to `steps / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Check ranges and that every registry name resolves.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(CliError::field("grid.horizon", "must be positive and finite"));
        }
        if self.grid.steps == 0 {
            return Err(CliError::field("grid.steps", "must be positive"));
        }
        if self.ensemble.paths == 0 {
            return Err(CliError::field("ensemble.paths", "must be positive"));
        }
        self.ensemble.filtration()?;
        if self.basis.cell_size == 0 {
            return Err(CliError::field("basis.cell_size", "must be positive"));
        }
        let terminals = standard_terminals();
        let drivers = standard_drivers();
        terminals
            .build(&self.problem.terminal, &self.problem.terminal_params)
            .map_err(|e| CliError::core("problem.terminal", e))?;
        drivers
            .build(&self.problem.driver, &self.problem.driver_params)
            .map_err(|e| CliError::core("problem.driver", e))?;
        standard_basis_families()
            .build(&self.basis.family, &Params::new())
            .map_err(|e| CliError::core("basis.family", e))?;
        self.linear.regression.validate().map_err(|e| CliError::core("linear.regression", e))?;
        self.picard.validate().map_err(|e| CliError::core("picard", e))?;
        if self.verification.tests.n_tests == 0 {
            return Err(CliError::field("verification.n_tests", "must be at least 1"));
        }
        if let Some(c) = &self.comparison {
            terminals
                .build(&c.terminal, &c.terminal_params)
                .map_err(|e| CliError::core("comparison.terminal", e))?;
            drivers
                .build(&c.driver, &c.driver_params)
                .map_err(|e| CliError::core("comparison.driver", e))?;
            if c.tolerance.is_some_and(|t| !(t >= 0.0)) {
                return Err(CliError::field("comparison.tolerance", "must be non-negative"));
            }
        }
        if let Some(split) = self.consistency.as_ref().and_then(|c| c.split) {
            if split == 0 || split >= self.grid.steps {
                return Err(CliError::field("consistency.split", "must lie strictly between 0 and grid.steps"));
            }
        }
        Ok(())
    }
}
