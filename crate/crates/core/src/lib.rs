//! Joint Bayesian inference for regression models whose continuous covariate
//! carries classical measurement error, Berkson measurement error and/or
//! missing values.
//!
//! Missing cells are treated as the limit of classical error with infinite
//! variance: they simply drop out of the classical-error likelihood and are
//! imputed through the exposure model. Two inference backends share one
//! model compilation ([`joint::JointModel`]):
//!
//! - [`gibbs`], a blocked Gibbs / Metropolis-within-Gibbs sampler;
//! - [`marginal`], a conditional-Gaussian (Laplace for non-Gaussian responses)
//!   latent field with grid integration over the hyperparameters.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod gmrf;
pub mod index;
pub mod joint;
pub mod likelihood;
pub mod marginal;
pub mod oracle;
pub mod posterior;
pub mod simgen;
pub mod spec;
pub mod study;

pub use data::{Covariates, Dataset, Measurements, Response};
pub use error::{Error, Result};
pub use gibbs::{run_chains, ChainConfig, MhSteps};
pub use index::{build_index_map, LatentIndexMap};
pub use joint::{HyperState, JointModel};
pub use likelihood::{Family, ResponseLik};
pub use marginal::{fit_marginal, GridConfig};
pub use oracle::{conjugate_linear, ConjugatePosterior};
pub use posterior::{Density, Draws, EngineKind, LatentSummary, ParamSummary, PosteriorResult};
pub use simgen::{simulate_replicate, simulate_weibull, SimConfig, SimReplicate, WeibullSimConfig};
pub use spec::{
    build_error_scaling, validate, ErrorLayers, ErrorScaling, GaussianPrior, Likelihood, ModelSpec, PositivePrior,
    PriorSet, ValidationReport, Violation, NO_ERROR_SCALE,
};
pub use study::{run_study, StudyConfig, StudyModel, StudySummary};
