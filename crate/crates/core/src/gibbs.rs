//! Blocked Gibbs sampler, with Metropolis-within-Gibbs steps for the
//! Weibull response.
//!
//! Gaussian response, per iteration:
//! 1. the whole latent vector given `beta_x` and the precisions (one exact
//!    draw from the joint Gaussian conditional);
//! 2. the regression block `(beta0, beta_z, beta_x)` given `x`, exact;
//! 3. conjugate Gamma updates of the non-fixed precisions.
//!
//! Weibull response, per iteration:
//! 1. `(r, alpha)` given `x`, exact (the response does not involve them);
//! 2. each `x_i` by Metropolis with a curvature-scaled Gaussian proposal;
//! 3. the regression block by random-walk Metropolis with covariance from
//!    the curvature at the current state (refreshed during burn-in);
//! 4. `log kappa` by random-walk Metropolis;
//! 5. conjugate updates of the measurement-error precisions.
//!
//! Proposal scales adapt during burn-in only, towards acceptance in
//! `[0.2, 0.5]`.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{factorize, SparseSpd};
use crate::index::RLayout;
use crate::joint::{Hyper, HyperState, JointModel, ResponseRows};
use crate::posterior::{Draws, EngineKind, LatentSummary, ParamSummary, PosteriorResult};
use crate::spec::{Likelihood, PositivePrior};

const ADAPT_WINDOW: usize = 50;
const BETA_COV_REFRESH: usize = 100;

/// Initial Metropolis proposal scales (multipliers of the curvature-based
/// standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhSteps {
    pub x: f64,
    pub beta: f64,
    pub log_kappa: f64,
}

impl Default for MhSteps {
    fn default() -> Self {
        Self { x: 1.5, beta: 1.0, log_kappa: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Keep the retained draws in the result.
    pub keep_draws: bool,
    pub steps: MhSteps,
    pub adapt: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            chains: 2,
            keep_draws: false,
            steps: MhSteps::default(),
            adapt: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::InvalidArgument("thinning and chain count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Current value of the latent vector and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub v: Vec<f64>,
    pub hyper: HyperState,
}

impl ChainState {
    pub fn initial(model: &JointModel) -> Self {
        Self { v: model.initial_latent(), hyper: model.initial_hyper() }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Step {
    scale: f64,
    window_acc: usize,
    window_tries: usize,
    acc: usize,
    tries: usize,
}

impl Step {
    fn new(scale: f64) -> Self {
        Self { scale, ..Default::default() }
    }

    fn record(&mut self, accepted: bool) {
        self.window_tries += 1;
        self.tries += 1;
        if accepted {
            self.window_acc += 1;
            self.acc += 1;
        }
    }

    fn adapt(&mut self) {
        if self.window_tries == 0 {
            return;
        }
        let rate = self.window_acc as f64 / self.window_tries as f64;
        if rate < 0.2 {
            self.scale *= 0.7;
        } else if rate > 0.5 {
            self.scale *= 1.35;
        }
        self.window_acc = 0;
        self.window_tries = 0;
    }

    fn reset_counts(&mut self) {
        *self = Self::new(self.scale);
    }

    fn rate(&self) -> Option<f64> {
        (self.tries > 0).then(|| self.acc as f64 / self.tries as f64)
    }
}

/// Metropolis tuning state for the Weibull sweep.
#[derive(Debug, Clone)]
pub struct MhTuning {
    x: Step,
    beta: Step,
    kappa: Step,
    beta_chol: Option<DMatrix<f64>>,
}

impl MhTuning {
    pub fn new(steps: MhSteps) -> Self {
        Self { x: Step::new(steps.x), beta: Step::new(steps.beta), kappa: Step::new(steps.log_kappa), beta_chol: None }
    }

    fn adapt(&mut self) {
        self.x.adapt();
        self.beta.adapt();
        self.kappa.adapt();
    }

    fn reset_counts(&mut self) {
        self.x.reset_counts();
        self.beta.reset_counts();
        self.kappa.reset_counts();
    }

    /// Acceptance rates since the last reset.
    pub fn rates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, s) in [("accept_x", &self.x), ("accept_beta", &self.beta), ("accept_kappa", &self.kappa)] {
            if let Some(r) = s.rate() {
                out.insert(name.to_string(), r);
            }
        }
        out
    }

    pub fn scales(&self) -> MhSteps {
        MhSteps { x: self.x.scale, beta: self.beta.scale, log_kappa: self.kappa.scale }
    }
}

/// Posterior `(shape, rate)` of a Gamma precision after `k` residuals with
/// scaled sum of squares `ss`.
pub fn conjugate_gamma(shape: f64, rate: f64, ss: f64, k: usize) -> (f64, f64) {
    (shape + 0.5 * k as f64, rate + 0.5 * ss)
}

/// Gaussian response: one exact draw of the latent vector given `beta_x`,
/// then (when `x` is latent) of `(beta0, beta_z, beta_x)` given `x`.
pub fn draw_latent_block<R: Rng + ?Sized>(model: &JointModel, state: &mut ChainState, rng: &mut R) -> Result<()> {
    if model.likelihood() != Likelihood::GaussianLinear {
        return Err(Error::InvalidArgument("exact latent draws require a Gaussian response".into()));
    }
    let sys = model.system(&state.hyper, ResponseRows::Gaussian)?;
    let factor = model.factorize(&sys, true)?;
    state.v = factor.sample_canonical(&sys.b, rng)?;
    if model.map.x_latent() {
        draw_regression_block(model, state, rng)?;
    }
    Ok(())
}

/// Design row `(1, z_i, x_i)` of the regression block.
fn design_row(model: &JointModel, v: &[f64], i: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(model.n_regression_covariates() + 2);
    a.push(1.0);
    a.extend_from_slice(model.z_row(i));
    a.push(model.x_value(v, i));
    a
}

/// Gaussian prior `(mean, precision)` of each regression-block coordinate.
fn regression_priors(model: &JointModel) -> Vec<(f64, f64)> {
    let map = &model.map;
    let mut out: Vec<(f64, f64)> = model
        .coefficient_priors()
        .iter()
        .filter(|(k, _)| map.beta.range().contains(k) || map.beta_x == Some(*k))
        .map(|(_, p)| (p.mean, p.precision))
        .collect();
    if map.x_latent() {
        let p = model.beta_x_prior();
        out.push((p.mean, p.precision));
    }
    out
}

fn read_regression(model: &JointModel, state: &ChainState) -> Vec<f64> {
    let mut b = state.v[model.map.beta.range()].to_vec();
    b.push(model.map.beta_x.map_or(state.hyper.beta_x, |k| state.v[k]));
    b
}

fn write_regression(model: &JointModel, state: &mut ChainState, b: &[f64]) {
    let map = &model.map;
    state.v[map.beta.range()].copy_from_slice(&b[..map.beta.len]);
    match map.beta_x {
        Some(k) => state.v[k] = b[map.beta.len],
        None => state.hyper.beta_x = b[map.beta.len],
    }
}

fn draw_regression_block<R: Rng + ?Sized>(model: &JointModel, state: &mut ChainState, rng: &mut R) -> Result<()> {
    let priors = regression_priors(model);
    let d = priors.len();
    let mut q = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (k, &(m, p)) in priors.iter().enumerate() {
        q[k][k] += p;
        b[k] += p * m;
    }
    let tau = state.hyper.tau_y;
    let y = model.y();
    for (i, _) in model.response_included().iter().enumerate().filter(|(_, inc)| **inc) {
        let a = design_row(model, &state.v, i);
        for r in 0..d {
            b[r] += tau * y[i] * a[r];
            for c in 0..d {
                q[r][c] += tau * a[r] * a[c];
            }
        }
    }
    let draw = factorize(&SparseSpd::from_dense(&q)?)?.sample_canonical(&b, rng)?;
    write_regression(model, state, &draw);
    Ok(())
}

/// Conjugate Gamma draws for the active, non-fixed precisions. Fixed
/// entries are returned untouched.
pub fn update_precisions<R: Rng + ?Sized>(model: &JointModel, v: &[f64], hyper: &HyperState, rng: &mut R) -> HyperState {
    let res = model.layer_residuals(v, hyper);
    let mut out = *hyper;
    for (h, prior) in model.active_precisions() {
        let PositivePrior::Gamma { shape, rate } = prior else { continue };
        let (ss, k) = match h {
            Hyper::TauY => res.response,
            Hyper::TauUc => res.classical,
            Hyper::TauUb => res.berkson,
            Hyper::TauX => res.imputation,
            Hyper::BetaX | Hyper::Kappa => continue,
        };
        let (a, b) = conjugate_gamma(shape, rate, ss, k);
        let g = Gamma::new(a, 1.0 / b).expect("shape and rate stay positive");
        out.set(h, g.sample(rng));
    }
    out
}

/// One Metropolis-within-Gibbs sweep for the Weibull response.
pub fn update_nongaussian<R: Rng + ?Sized>(
    model: &JointModel,
    state: &mut ChainState,
    tuning: &mut MhTuning,
    refresh_beta_cov: bool,
    rng: &mut R,
) -> Result<()> {
    if model.likelihood() != Likelihood::WeibullSurvival {
        return Err(Error::InvalidArgument("Metropolis sweep is for the Weibull response".into()));
    }
    let map = &model.map;

    // (r, alpha) given x: the Gaussian rows without the response
    let mut gaussian_free: Vec<usize> = Vec::new();
    if let RLayout::Own(b) = map.r {
        gaussian_free.extend(b.range());
    }
    if let Some(a) = map.alpha {
        gaussian_free.extend(a.range());
    }
    let sys0 = model.system(&state.hyper, ResponseRows::Omit)?;
    if !gaussian_free.is_empty() {
        let (qf, bf) = sys0.q.condition(&sys0.b, &gaussian_free, &state.v)?;
        let draw = factorize(&qf)?.sample_canonical(&bf, rng)?;
        for (&k, d) in gaussian_free.iter().zip(draw) {
            state.v[k] = d;
        }
    }

    let lik = model.response_lik(&state.hyper)?;
    let include = model.response_included();
    let mut eta = model.eta(&state.v, state.hyper.beta_x);

    // x sites are conditionally independent given everything else
    if let Some(xb) = map.x {
        let qv = sys0.q.mul_vec(&state.v)?;
        let bx = state.hyper.beta_x;
        let s = tuning.x.scale;
        for i in 0..model.n() {
            let k = xb.at(i);
            let x0 = state.v[k];
            let p = sys0.q.get(k, k);
            let lin = sys0.b[k] - qv[k] + p * x0;
            let base = eta[i] - bx * x0;
            let log_target = |x: f64| {
                let resp = if include[i] { lik.term(i, base + bx * x) } else { 0.0 };
                -0.5 * p * x * x + lin * x + resp
            };
            let curvature = |x: f64| {
                let c = if include[i] { lik.term_derivatives(i, base + bx * x).1 } else { 0.0 };
                p + bx * bx * c
            };
            let h0 = curvature(x0);
            let eps: f64 = rng.sample(StandardNormal);
            let x1 = x0 + s * eps / h0.sqrt();
            let accepted = if x1 == x0 {
                true
            } else {
                let h1 = curvature(x1);
                let log_q = |to: f64, from: f64, h: f64| 0.5 * h.ln() - 0.5 * h * (to - from).powi(2) / (s * s);
                let log_alpha = log_target(x1) - log_target(x0) + log_q(x0, x1, h1) - log_q(x1, x0, h0);
                accept(log_alpha, rng)
            };
            if accepted {
                state.v[k] = x1;
                eta[i] = base + bx * x1;
            }
            tuning.x.record(accepted);
        }
    }

    // regression block
    let priors = regression_priors(model);
    let d = priors.len();
    if refresh_beta_cov || tuning.beta_chol.is_none() {
        tuning.beta_chol = Some(regression_proposal_chol(model, state, &lik, &eta, &priors)?);
    }
    let chol = tuning.beta_chol.as_ref().expect("set above");
    let beta0 = read_regression(model, state);
    let log_post_beta = |beta: &[f64], eta: &[f64]| -> Result<f64> {
        let prior: f64 = beta.iter().zip(&priors).map(|(b, (m, p))| -0.5 * p * (b - m).powi(2)).sum();
        Ok(lik.loglik(eta)? + prior)
    };
    let current = log_post_beta(&beta0, &eta)?;
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let delta = chol * z * tuning.beta.scale;
    let beta1: Vec<f64> = beta0.iter().zip(delta.iter()).map(|(b, dl)| b + dl).collect();
    let accepted = if beta1 == beta0 {
        true
    } else {
        let mut trial = state.clone();
        write_regression(model, &mut trial, &beta1);
        let eta1 = model.eta(&trial.v, trial.hyper.beta_x);
        let proposed = log_post_beta(&beta1, &eta1)?;
        if accept(proposed - current, rng) {
            *state = trial;
            eta = eta1;
            true
        } else {
            false
        }
    };
    tuning.beta.record(accepted);

    // log kappa
    if let Some(prior @ PositivePrior::Gamma { .. }) = model.positive_prior(Hyper::Kappa) {
        let k0 = state.hyper.kappa;
        let lk1 = k0.ln() + tuning.kappa.scale * rng.sample::<f64, _>(StandardNormal);
        let k1 = if tuning.kappa.scale == 0.0 { k0 } else { lk1.exp() };
        let accepted = if k1 == k0 {
            true
        } else {
            let mut lik1 = lik.clone();
            let target = |l: &crate::likelihood::ResponseLik, log_k: f64| -> Result<f64> {
                Ok(l.loglik(&eta)? + prior.log_density_log_scale(log_k))
            };
            match lik1.set_kappa(k1) {
                Ok(()) => {
                    let log_alpha = target(&lik1, lk1)? - target(&lik, k0.ln())?;
                    accept(log_alpha, rng)
                }
                Err(_) => false,
            }
        };
        if accepted {
            state.hyper.kappa = k1;
        }
        tuning.kappa.record(accepted);
    }

    state.hyper = update_precisions(model, &state.v, &state.hyper, rng);
    Ok(())
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
}

/// Cholesky factor of `(prior + Aᵀ C A)⁻¹` at the current state.
fn regression_proposal_chol(
    model: &JointModel,
    state: &ChainState,
    lik: &crate::likelihood::ResponseLik,
    eta: &[f64],
    priors: &[(f64, f64)],
) -> Result<DMatrix<f64>> {
    let d = priors.len();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for (k, &(_, p)) in priors.iter().enumerate() {
        m[(k, k)] += p;
    }
    let (_, curv) = lik.grad_hess_eta(eta)?;
    for (i, c) in curv.iter().enumerate().filter(|(_, c)| **c > 0.0) {
        let a = DVector::from_vec(design_row(model, &state.v, i));
        m += &a * a.transpose() * *c;
    }
    let cov = m.try_inverse().ok_or(Error::NonFiniteDensity)?;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(cov.cholesky().ok_or(Error::NonFiniteDensity)?.l())
}

/// One full sweep of the sampler.
pub fn sweep<R: Rng + ?Sized>(
    model: &JointModel,
    state: &mut ChainState,
    tuning: &mut MhTuning,
    refresh_beta_cov: bool,
    rng: &mut R,
) -> Result<()> {
    match model.likelihood() {
        Likelihood::GaussianLinear => {
            draw_latent_block(model, state, rng)?;
            state.hyper = update_precisions(model, &state.v, &state.hyper, rng);
            Ok(())
        }
        Likelihood::WeibullSurvival => update_nongaussian(model, state, tuning, refresh_beta_cov, rng),
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    x_m2: Vec<f64>,
    count: usize,
    rates: BTreeMap<String, f64>,
}

fn run_chain(model: &JointModel, cfg: &ChainConfig, chain: u64) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain);
    let sources = model.parameter_sources();
    let mut state = ChainState::initial(model);
    let mut tuning = MhTuning::new(cfg.steps);
    let n = model.n();
    let x_block = model.map.x;
    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.retained()),
        x_mean: vec![0.0; if x_block.is_some() { n } else { 0 }],
        x_m2: vec![0.0; if x_block.is_some() { n } else { 0 }],
        count: 0,
        rates: BTreeMap::new(),
    };
    for t in 0..cfg.iterations {
        let burning = t < cfg.burn_in;
        let refresh = burning && t % BETA_COV_REFRESH == 0;
        sweep(model, &mut state, &mut tuning, refresh, &mut rng)
            .map_err(|e| Error::Sampler { iteration: t, source: Box::new(e) })?;
        if burning && cfg.adapt && (t + 1) % ADAPT_WINDOW == 0 {
            tuning.adapt();
        }
        if t + 1 == cfg.burn_in {
            tuning.reset_counts();
        }
        if !burning && (t - cfg.burn_in).is_multiple_of(cfg.thin) {
            out.draws.push(sources.iter().map(|(_, s)| s.read(&state.v, &state.hyper)).collect());
            if let Some(xb) = x_block {
                out.count += 1;
                let c = out.count as f64;
                for i in 0..n {
                    let x = state.v[xb.at(i)];
                    let d = x - out.x_mean[i];
                    out.x_mean[i] += d / c;
                    out.x_m2[i] += d * (x - out.x_mean[i]);
                }
            }
        }
    }
    out.rates = tuning.rates();
    Ok(out)
}

/// Runs `cfg.chains` independent chains in parallel and summarizes the
/// retained draws.
pub fn run_chains(model: &JointModel, cfg: &ChainConfig) -> Result<PosteriorResult> {
    cfg.validate()?;
    let start = Instant::now();
    let outputs: Vec<ChainOutput> =
        (0..cfg.chains as u64).into_par_iter().map(|c| run_chain(model, cfg, c)).collect::<Result<_>>()?;

    let names = model.parameter_names();
    let params = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.draws.iter().map(|d| d[k]).collect()).collect();
            ParamSummary::from_chains(name, &chains)
        })
        .collect();

    // pooled latent x moments (Chan's parallel combination)
    let mut latent_x = Vec::new();
    if model.map.x_latent() {
        let total: usize = outputs.iter().map(|o| o.count).sum();
        for i in 0..model.n() {
            let (mut cnt, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for o in &outputs {
                let nb = o.count as f64;
                let delta = o.x_mean[i] - mean;
                let tot = cnt + nb;
                mean += delta * nb / tot;
                m2 += o.x_m2[i] + delta * delta * cnt * nb / tot;
                cnt = tot;
            }
            let sd = if total > 1 { (m2 / (total as f64 - 1.0)).sqrt() } else { 0.0 };
            latent_x.push(LatentSummary { site: i, mean, sd });
        }
    }

    let mut diagnostics = BTreeMap::new();
    for (c, o) in outputs.iter().enumerate() {
        for (k, r) in &o.rates {
            diagnostics.insert(format!("{k}_chain{c}"), *r);
        }
    }
    let draws = cfg
        .keep_draws
        .then(|| Draws { names: names.clone(), chains: outputs.iter().map(|o| o.draws.clone()).collect() });

    Ok(PosteriorResult {
        engine: EngineKind::Gibbs,
        params,
        latent_x,
        elapsed_secs: start.elapsed().as_secs_f64(),
        seed: Some(cfg.seed),
        draws,
        diagnostics,
        densities: Vec::new(),
    })
}
