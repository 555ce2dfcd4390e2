//! Posterior summaries shared by both engines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{ess, mean_sd, quantile_sorted, split_rhat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Gibbs,
    Marginal,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::Gibbs => "gibbs",
            EngineKind::Marginal => "marginal",
        }
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
}

impl ParamSummary {
    /// Summarizes retained draws, one vector per chain.
    pub fn from_chains(name: &str, chains: &[Vec<f64>]) -> Self {
        let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let (mean, sd) = mean_sd(&pooled);
        pooled.sort_by(f64::total_cmp);
        Self {
            name: name.to_string(),
            mean,
            sd,
            q025: quantile_sorted(&pooled, 0.025),
            q975: quantile_sorted(&pooled, 0.975),
            ess: Some(ess(chains)),
            rhat: split_rhat(chains),
        }
    }

    /// Monte-Carlo standard error of the mean, when an ESS is available.
    pub fn mcse(&self) -> Option<f64> {
        self.ess.filter(|e| *e > 0.0).map(|e| self.sd / e.sqrt())
    }
}

/// Posterior mean and sd of one latent covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub site: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Retained draws: `chains[c][t][k]` is parameter `names[k]` at retained
/// iteration `t` of chain `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    pub names: Vec<String>,
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl Draws {
    /// Per-chain trace of parameter `k`.
    pub fn trace(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|row| row[k]).collect()).collect()
    }
}

/// Marginal density of a parameter on an evaluation lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub name: String,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub engine: EngineKind,
    pub params: Vec<ParamSummary>,
    pub latent_x: Vec<LatentSummary>,
    pub elapsed_secs: f64,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Draws>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub densities: Vec<Density>,
}

impl PosteriorResult {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_two_chains() {
        let chains = vec![(0..100).map(f64::from).collect::<Vec<_>>(), (100..200).map(f64::from).collect()];
        let s = ParamSummary::from_chains("a", &chains);
        assert_eq!(s.mean, 99.5);
        assert!(s.q025 < s.q975);
        assert!(s.rhat.unwrap() > 1.5);
        assert!(s.mcse().unwrap() > 0.0);
    }

    #[test]
    fn single_chain_has_ess_but_no_rhat() {
        let s = ParamSummary::from_chains("a", &[vec![1.0, 2.0, 1.5, 0.5, 1.2, 0.9]]);
        assert!(s.rhat.is_none());
        assert!(s.ess.is_some());
    }
}
