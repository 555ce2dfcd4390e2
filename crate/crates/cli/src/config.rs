//! TOML model configuration.
//!
//! ```toml
//! [likelihood]
//! family = "gaussian"
//!
//! [columns]
//! response = "chl"
//! w = ["bmi"]
//! z = ["age"]
//! z_tilde = ["age"]
//!
//! [layers]
//! classical = true
//! imputation = true
//!
//! [priors]
//! tau_y = { dist = "gamma", shape = 2.0, rate = 846.8 }
//! tau_uc = { dist = "fixed", value = 1.0 }
//!
//! [scaling]
//! observed = "exact"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use memiss_core::{
    spec::build_error_scaling_with, ChainConfig, Dataset, ErrorLayers, GaussianPrior, GridConfig,
    Likelihood, ModelSpec, PositivePrior, PriorSet, NO_ERROR_SCALE,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub likelihood: LikelihoodConfig,
    pub columns: ColumnBindings,
    #[serde(default)]
    pub layers: LayerConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    #[serde(default)]
    pub marginal: MarginalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Gaussian,
    Weibull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub family: FamilyName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnBindings {
    /// Gaussian response column.
    #[serde(default)]
    pub response: Option<String>,
    /// Survival time and event-indicator columns.
    #[serde(default)]
    pub time: Option<String>,
    #[serde(default)]
    pub event: Option<String>,
    /// Replicate measurements of the error-prone covariate.
    pub w: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub z_tilde: Vec<String>,
    /// Columns dummy-coded even if their levels look numeric.
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default = "default_na")]
    pub na_token: String,
    /// Drop rows whose first measurement of `w` is missing.
    #[serde(default)]
    pub complete_case: bool,
}

fn default_na() -> String {
    "NA".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBinding {
    Gaussian(String),
    Survival { time: String, event: String },
}

impl ColumnBindings {
    pub fn response_binding(&self, family: FamilyName) -> CliResult<ResponseBinding> {
        match (family, &self.response, &self.time, &self.event) {
            (FamilyName::Gaussian, Some(r), None, None) => Ok(ResponseBinding::Gaussian(r.clone())),
            (FamilyName::Weibull, None, Some(t), Some(e)) => {
                Ok(ResponseBinding::Survival { time: t.clone(), event: e.clone() })
            }
            (FamilyName::Gaussian, ..) => Err(CliError::Config("gaussian family needs exactly `response`".into())),
            (FamilyName::Weibull, ..) => {
                Err(CliError::Config("weibull family needs `time` and `event` and no `response`".into()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    #[serde(default)]
    pub classical: bool,
    #[serde(default)]
    pub berkson: bool,
    #[serde(default)]
    pub imputation: bool,
}

/// A prior given by distribution name and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorDef {
    Normal { mean: f64, precision: f64 },
    Gamma { shape: f64, rate: f64 },
    Fixed { value: f64 },
}

impl PriorDef {
    fn gaussian(&self, name: &str) -> CliResult<GaussianPrior> {
        match *self {
            PriorDef::Normal { mean, precision } => Ok(GaussianPrior::new(mean, precision)),
            _ => Err(CliError::Config(format!("coefficient prior `{name}` must be normal"))),
        }
    }

    fn positive(&self, name: &str) -> CliResult<PositivePrior> {
        match *self {
            PriorDef::Gamma { shape, rate } => Ok(PositivePrior::Gamma { shape, rate }),
            PriorDef::Fixed { value } => Ok(PositivePrior::Fixed(value)),
            PriorDef::Normal { .. } => Err(CliError::Config(format!("prior `{name}` must be gamma or fixed"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub beta: Option<PriorDef>,
    #[serde(default)]
    pub alpha: Option<PriorDef>,
    #[serde(default)]
    pub tau_y: Option<PriorDef>,
    #[serde(default)]
    pub tau_uc: Option<PriorDef>,
    #[serde(default)]
    pub tau_ub: Option<PriorDef>,
    #[serde(default)]
    pub tau_x: Option<PriorDef>,
    #[serde(default)]
    pub kappa: Option<PriorDef>,
    /// Per-coefficient overrides, keyed by reported parameter name.
    #[serde(default)]
    pub coefficients: BTreeMap<String, PriorDef>,
}

impl PriorConfig {
    pub fn to_prior_set(&self) -> CliResult<PriorSet> {
        let mut set = PriorSet::default();
        if let Some(p) = &self.beta {
            set.beta = p.gaussian("beta")?;
        }
        if let Some(p) = &self.alpha {
            set.alpha = p.gaussian("alpha")?;
        }
        for (name, slot, def) in [
            ("tau_y", &mut set.tau_y, &self.tau_y),
            ("tau_uc", &mut set.tau_uc, &self.tau_uc),
            ("tau_ub", &mut set.tau_ub, &self.tau_ub),
            ("tau_x", &mut set.tau_x, &self.tau_x),
            ("kappa", &mut set.kappa, &self.kappa),
        ] {
            if let Some(d) = def {
                *slot = d.positive(name)?;
            }
        }
        for (name, def) in &self.coefficients {
            set.overrides.insert(name.clone(), def.gaussian(name)?);
        }
        Ok(set)
    }
}

/// How observed cells of `w` enter the classical-error layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservedCells {
    /// Measured with error, scaling `base`.
    #[default]
    Error,
    /// Measured exactly, scaling `no_error`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default)]
    pub observed: ObservedCells,
    #[serde(default = "one")]
    pub base: f64,
    #[serde(default = "no_error")]
    pub no_error: f64,
}

fn one() -> f64 {
    1.0
}

fn no_error() -> f64 {
    NO_ERROR_SCALE
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { observed: ObservedCells::Error, base: 1.0, no_error: NO_ERROR_SCALE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        let d = ChainConfig::default();
        Self { iterations: d.iterations, burn_in: d.burn_in, thin: d.thin, chains: d.chains }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalConfig {
    pub step: f64,
    pub drop: f64,
    pub max_axis_steps: usize,
    pub latent_sites: bool,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        let d = GridConfig::default();
        Self { step: d.step, drop: d.drop, max_axis_steps: d.max_axis_steps, latent_sites: d.latent_sites }
    }
}

impl FitConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn likelihood(&self) -> Likelihood {
        match self.likelihood.family {
            FamilyName::Gaussian => Likelihood::GaussianLinear,
            FamilyName::Weibull => Likelihood::WeibullSurvival,
        }
    }

    /// Model specification for an ingested data set.
    pub fn model_spec(&self, data: &Dataset) -> CliResult<ModelSpec> {
        let layers = ErrorLayers { classical: self.layers.classical, berkson: self.layers.berkson };
        let mut spec = ModelSpec::plain(self.likelihood())
            .with_layers(layers, self.layers.imputation)
            .with_priors(self.priors.to_prior_set()?);
        let s = self.scaling;
        if layers.classical && (s.observed == ObservedCells::Exact || s.base != 1.0 || s.no_error != NO_ERROR_SCALE) {
            let mask = data.w.missing_mask();
            let flags: Vec<Vec<bool>> =
                mask.iter().map(|r| vec![s.observed == ObservedCells::Error; r.len()]).collect();
            spec = spec.with_scaling(build_error_scaling_with(&mask, &flags, s.base, s.no_error)?);
        }
        Ok(spec)
    }

    pub fn chain_config(&self, seed: u64) -> ChainConfig {
        let g = self.gibbs;
        ChainConfig { iterations: g.iterations, burn_in: g.burn_in, thin: g.thin, chains: g.chains, seed, ..ChainConfig::default() }
    }

    pub fn grid_config(&self) -> GridConfig {
        let m = self.marginal;
        GridConfig { step: m.step, drop: m.drop, max_axis_steps: m.max_axis_steps, latent_sites: m.latent_sites, ..GridConfig::default() }
    }
}
