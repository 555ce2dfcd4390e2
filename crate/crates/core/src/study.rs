//! Replicated simulation study: naive, corrected and best-case fits of each
//! simulated data set, aggregated over replicates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Measurements};
use crate::diagnostics::{mean_sd, quantile};
use crate::error::Result;
use crate::gibbs::{run_chains, ChainConfig};
use crate::joint::JointModel;
use crate::marginal::{fit_marginal, GridConfig};
use crate::posterior::{EngineKind, PosteriorResult};
use crate::simgen::{naive_limit, simulate_replicate, SimConfig, SimReplicate};
use crate::spec::{ErrorLayers, GaussianPrior, Likelihood, ModelSpec, PositivePrior, PriorSet};

/// Regression coefficients reported by the study, in `SimConfig::beta` order.
pub const STUDY_PARAMS: [&str; 3] = ["beta0", "beta_x", "beta_z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyModel {
    /// Complete-case regression on the error-prone measurement.
    Naive,
    /// Classical + Berkson error with missing-data imputation.
    Corrected,
    /// Regression on the true covariate.
    BestCase,
}

impl StudyModel {
    pub const ALL: [StudyModel; 3] = [StudyModel::Naive, StudyModel::Corrected, StudyModel::BestCase];

    pub fn as_str(&self) -> &'static str {
        match self {
            StudyModel::Naive => "naive",
            StudyModel::Corrected => "corrected",
            StudyModel::BestCase => "best_case",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub engine: EngineKind,
    pub grid: GridConfig,
    pub chains: ChainConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            engine: EngineKind::Marginal,
            grid: GridConfig { latent_sites: false, ..GridConfig::default() },
            chains: ChainConfig { iterations: 2000, burn_in: 1000, chains: 1, ..ChainConfig::default() },
        }
    }
}

/// Priors used by every study fit: vague coefficients, `Gamma(0.5, 0.5)`
/// precisions and unit error precisions held fixed.
pub fn study_priors() -> PriorSet {
    PriorSet {
        beta: GaussianPrior::new(0.0, 1e-6),
        alpha: GaussianPrior::new(0.0, 1e-6),
        tau_y: PositivePrior::Gamma { shape: 0.5, rate: 0.5 },
        tau_x: PositivePrior::Gamma { shape: 0.5, rate: 0.5 },
        tau_uc: PositivePrior::Fixed(1.0),
        tau_ub: PositivePrior::Fixed(1.0),
        ..PriorSet::default()
    }
}

/// Model specification and the data view it is fitted to.
pub fn prepare(model: StudyModel, rep: &SimReplicate) -> (ModelSpec, Dataset) {
    let plain = ModelSpec::plain(Likelihood::GaussianLinear).with_priors(study_priors());
    match model {
        StudyModel::Naive => (plain, rep.data.complete_case()),
        StudyModel::Corrected => (plain.with_layers(ErrorLayers::BOTH, true), rep.data.clone()),
        StudyModel::BestCase => {
            let mut data = rep.data.clone();
            data.w = Measurements::single("x", rep.oracle.x_true.iter().map(|x| Some(*x)).collect());
            (plain, data)
        }
    }
}

pub fn fit(model: StudyModel, rep: &SimReplicate, cfg: &StudyConfig) -> Result<PosteriorResult> {
    let (spec, data) = prepare(model, rep);
    let joint = JointModel::new(&spec, &data)?;
    match cfg.engine {
        EngineKind::Marginal => fit_marginal(&joint, &cfg.grid),
        EngineKind::Gibbs => {
            let chains = ChainConfig { seed: cfg.chains.seed.wrapping_add(rep.index as u64), ..cfg.chains.clone() };
            run_chains(&joint, &chains)
        }
    }
}

/// Posterior mean and 95% interval of one coefficient in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub model: StudyModel,
    /// In `STUDY_PARAMS` order.
    pub estimates: Vec<Estimate>,
}

pub fn fit_replicate(cfg: &StudyConfig, replicate: usize) -> Result<Vec<ReplicateFit>> {
    let rep = simulate_replicate(&cfg.sim, replicate);
    StudyModel::ALL
        .iter()
        .map(|&model| {
            let res = fit(model, &rep, cfg)?;
            let estimates = STUDY_PARAMS
                .iter()
                .map(|name| {
                    let p = res.param(name).expect("study models report every regression coefficient");
                    Estimate { mean: p.mean, q025: p.q025, q975: p.q975 }
                })
                .collect();
            Ok(ReplicateFit { replicate, model, estimates })
        })
        .collect()
}

/// Across-replicate summary of one coefficient under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model: StudyModel,
    pub parameter: String,
    /// Data-generating value.
    pub truth: f64,
    /// Mean of the per-replicate posterior means.
    pub mean: f64,
    pub sd: f64,
    /// 2.5% and 97.5% quantiles of the per-replicate posterior means.
    pub q025: f64,
    pub q975: f64,
    /// Fraction of replicates whose 95% interval contains `truth`.
    pub coverage: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub rows: Vec<StudyRow>,
    /// Large-sample limit of the naive estimator.
    pub naive_limit: [f64; 3],
}

impl StudySummary {
    pub fn row(&self, model: StudyModel, parameter: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.model == model && r.parameter == parameter)
    }
}

/// Summarizes replicate fits; the result does not depend on their order.
pub fn aggregate(sim: &SimConfig, fits: &[ReplicateFit]) -> StudySummary {
    let mut fits: Vec<&ReplicateFit> = fits.iter().collect();
    fits.sort_by_key(|f| (f.model, f.replicate));
    let mut rows = Vec::new();
    for model in StudyModel::ALL {
        let group: Vec<&&ReplicateFit> = fits.iter().filter(|f| f.model == model).collect();
        if group.is_empty() {
            continue;
        }
        for (k, name) in STUDY_PARAMS.iter().enumerate() {
            let truth = sim.beta[k];
            let means: Vec<f64> = group.iter().map(|f| f.estimates[k].mean).collect();
            let (mean, sd) = mean_sd(&means);
            let covered =
                group.iter().filter(|f| f.estimates[k].q025 <= truth && truth <= f.estimates[k].q975).count();
            rows.push(StudyRow {
                model,
                parameter: name.to_string(),
                truth,
                mean,
                sd,
                q025: quantile(&means, 0.025),
                q975: quantile(&means, 0.975),
                coverage: covered as f64 / group.len() as f64,
                replicates: group.len(),
            });
        }
    }
    StudySummary { rows, naive_limit: naive_limit(sim) }
}

/// Simulates and fits all replicates in parallel.
pub fn run_study(cfg: &StudyConfig) -> Result<(StudySummary, Vec<ReplicateFit>)> {
    cfg.sim.validate()?;
    let fits: Vec<ReplicateFit> = (0..cfg.sim.replicates)
        .into_par_iter()
        .map(|r| fit_replicate(cfg, r))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok((aggregate(&cfg.sim, &fits), fits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StudyConfig {
        StudyConfig { sim: SimConfig { n: 300, replicates: 3, ..SimConfig::default() }, ..StudyConfig::default() }
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let cfg = small();
        let (summary, mut fits) = run_study(&cfg).unwrap();
        fits.reverse();
        assert_eq!(aggregate(&cfg.sim, &fits), summary);
        assert_eq!(summary.rows.len(), 9);
        assert!(summary.rows.iter().all(|r| r.replicates == 3));
    }

    #[test]
    fn naive_is_attenuated_and_best_case_is_not() {
        let cfg = StudyConfig { sim: SimConfig { n: 2000, replicates: 1, ..SimConfig::default() }, ..small() };
        let fits = fit_replicate(&cfg, 0).unwrap();
        let bx = |m: StudyModel| fits.iter().find(|f| f.model == m).unwrap().estimates[1].mean;
        assert!((bx(StudyModel::Naive) - 1.0).abs() < 0.15);
        assert!((bx(StudyModel::BestCase) - 2.0).abs() < 0.1);
        assert!((bx(StudyModel::Corrected) - 2.0).abs() < 0.3);
    }

    #[test]
    fn replicate_fits_are_reproducible() {
        let cfg = small();
        assert_eq!(fit_replicate(&cfg, 1).unwrap(), fit_replicate(&cfg, 1).unwrap());
    }
}
