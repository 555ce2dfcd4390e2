//! Marginal-likelihood engine.
//!
//! Given the hyperparameters θ (`beta_x` when `x` is latent, log
//! precisions, log Weibull shape) the latent field is Gaussian: exactly for
//! a Gaussian response, by a Laplace approximation at the conditional mode
//! otherwise. `log p(θ | data)` is explored around its mode in standardized
//! coordinates `θ = mode + V Λ^{-1/2} z`: for up to three hyperparameters
//! a lattice flood-filled from the mode until the log density has dropped
//! by more than `drop`, a degree-5 symmetric cubature (centre, axis and
//! diagonal points) beyond. Latent marginals are mixtures of the
//! conditional Gaussians.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagnostics::mean_sd;
use crate::error::{Error, Result};
use crate::gmrf::CholFactor;
use crate::joint::{Hyper, HyperState, JointModel, ParamSource, ResponseRows};
use crate::posterior::{Density, EngineKind, LatentSummary, ParamSummary, PosteriorResult};
use crate::spec::Likelihood;

const NEWTON_MAX_ITER: usize = 50;
const LATTICE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Lattice spacing in standardized coordinates.
    pub step: f64,
    /// Points more than `drop` log units below the mode are discarded.
    pub drop: f64,
    /// Largest lattice index along each standardized axis.
    pub max_axis_steps: usize,
    /// Finite-difference step for the Hessian at the mode.
    pub fd_step: f64,
    /// Mode search stops once every coordinate step is below this.
    pub mode_tol: f64,
    /// Budget of density evaluations for the mode search.
    pub max_evals: usize,
    /// Use the Laplace path even for a Gaussian response.
    pub force_laplace: bool,
    /// Report posterior moments of every latent `x_i`.
    pub latent_sites: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            drop: 5.0,
            max_axis_steps: 12,
            fd_step: 0.01,
            mode_tol: 1e-3,
            max_evals: 5000,
            force_laplace: false,
            latent_sites: true,
        }
    }
}

/// Components of `log p(θ | data)` up to a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMarginal {
    pub log_evidence: f64,
    pub log_prior: f64,
    /// False when the Laplace inner loop hit its iteration cap.
    pub converged: bool,
    pub newton_iterations: usize,
}

impl LogMarginal {
    pub fn log_posterior(&self) -> f64 {
        if self.converged {
            self.log_evidence + self.log_prior
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Conditional Gaussian moments of the reported latent coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conditional {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One hyperparameter configuration: internal-scale θ, log unnormalized
/// posterior density and normalized integration weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
}

/// Points of an exploration with their payloads, plus the standardization
/// used to place them.
#[derive(Debug, Clone)]
pub struct Exploration<T> {
    pub points: Vec<ThetaPoint>,
    pub payloads: Vec<T>,
    pub mode: Vec<f64>,
    /// `Σ = H⁻¹`, the inverse negative Hessian at the mode.
    pub covariance: DMatrix<f64>,
    /// `θ = mode + transform · z`.
    pub transform: DMatrix<f64>,
    pub evaluations: usize,
}

/// Internal-scale hyperparameters of a model.
#[derive(Debug, Clone)]
pub struct ThetaMap {
    pub hypers: Vec<Hyper>,
    base: HyperState,
}

impl ThetaMap {
    pub fn new(model: &JointModel) -> Self {
        Self { hypers: model.free_hypers(), base: model.initial_hyper() }
    }

    pub fn dim(&self) -> usize {
        self.hypers.len()
    }

    pub fn to_hyper(&self, theta: &[f64]) -> HyperState {
        let mut h = self.base;
        for (k, t) in self.hypers.iter().zip(theta) {
            h.set(*k, if k.is_positive() { t.exp() } else { *t });
        }
        h
    }

    pub fn to_theta(&self, hyper: &HyperState) -> Vec<f64> {
        self.hypers.iter().map(|k| if k.is_positive() { hyper.get(*k).ln() } else { hyper.get(*k) }).collect()
    }

    /// Data-informed starting point: response and exposure precisions from
    /// the observed variances, everything else at 1 (and `beta_x` at 0).
    pub fn start(&self, model: &JointModel) -> Vec<f64> {
        let mut h = self.base;
        let y: Vec<f64> = model
            .y()
            .iter()
            .zip(model.response_included())
            .filter(|(_, inc)| **inc)
            .map(|(v, _)| *v)
            .collect();
        let w: Vec<f64> = (0..model.n()).map(|i| model.w_first(i)).filter(|v| v.is_finite()).collect();
        let inv_var = |v: &[f64]| {
            let (_, sd) = mean_sd(v);
            if sd > 0.0 && sd.is_finite() {
                1.0 / (sd * sd)
            } else {
                1.0
            }
        };
        for k in &self.hypers {
            let v = match k {
                Hyper::BetaX => 0.0,
                Hyper::TauY => inv_var(&y),
                Hyper::TauX => inv_var(&w),
                _ => 1.0,
            };
            h.set(*k, v);
        }
        self.to_theta(&h)
    }
}

/// Latent indices whose conditional moments are reported.
fn reported_indices(model: &JointModel, latent_sites: bool) -> Vec<usize> {
    let mut idx = Vec::new();
    if latent_sites {
        if let Some(b) = model.map.x {
            idx.extend(b.range());
        }
    }
    idx.extend(model.parameter_sources().into_iter().filter_map(|(_, s)| match s {
        ParamSource::Latent(k) => Some(k),
        ParamSource::Hyper(_) => None,
    }));
    idx
}

fn conditional_moments(factor: &CholFactor, mean: &[f64], indices: &[usize]) -> Conditional {
    let start = indices.iter().copied().min().unwrap_or(0);
    let var = factor.marginal_variances_from(start);
    Conditional { mean: indices.iter().map(|&k| mean[k]).collect(), var: indices.iter().map(|&k| var[k - start]).collect() }
}

/// `log p(data | θ)` and `log p(θ)` at the given hyperparameters, with the
/// conditional mean and factor of the latent field.
pub fn log_marginal_full(
    model: &JointModel,
    hyper: &HyperState,
    force_laplace: bool,
) -> Result<(LogMarginal, Vec<f64>, CholFactor)> {
    let log_prior = model.log_hyper_prior(hyper);
    if model.likelihood() == Likelihood::GaussianLinear && !force_laplace {
        let (log_evidence, mean, factor) = model.gaussian_evidence(hyper)?;
        return Ok((LogMarginal { log_evidence, log_prior, converged: true, newton_iterations: 0 }, mean, factor));
    }
    laplace(model, hyper, log_prior)
}

/// Log marginal likelihood and log hyperprior at `hyper`.
pub fn log_marginal(model: &JointModel, hyper: &HyperState, force_laplace: bool) -> Result<LogMarginal> {
    log_marginal_full(model, hyper, force_laplace).map(|(lm, _, _)| lm)
}

fn laplace(model: &JointModel, hyper: &HyperState, log_prior: f64) -> Result<(LogMarginal, Vec<f64>, CholFactor)> {
    let lik = model.response_lik(hyper)?;
    let objective = |v: &[f64]| -> Result<f64> {
        let eta = model.eta(v, hyper.beta_x);
        Ok(lik.loglik(&eta)? - 0.5 * model.residual_sum(v, hyper, ResponseRows::Omit))
    };
    let mut v = model.initial_latent();
    let mut phi = objective(&v)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut last = None;
    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let eta = model.eta(&v, hyper.beta_x);
        let (g, c) = lik.grad_hess_eta(&eta)?;
        let canon: Vec<f64> = g.iter().zip(&c).zip(&eta).map(|((g, c), e)| g + c * e).collect();
        let sys = model.system(hyper, ResponseRows::Pseudo { prec: &c, canon: &canon })?;
        let factor = model.factorize(&sys, true)?;
        let target = factor.solve(&sys.b)?;
        let scale = 1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let full_step = v.iter().zip(&target).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if full_step <= 1e-10 * scale {
            converged = true;
            last = Some((factor, sys.log_norm));
            break;
        }
        // damped step: halve until the objective does not decrease
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-6 {
            let cand: Vec<f64> = v.iter().zip(&target).map(|(a, b)| a + t * (b - a)).collect();
            let pc = objective(&cand)?;
            if pc.is_finite() && pc >= phi - 1e-12 * phi.abs() {
                accepted = Some((cand, pc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, pc)) = accepted else {
            // no ascent direction left: we are at the mode to working precision
            converged = true;
            last = Some((factor, sys.log_norm));
            break;
        };
        v = cand;
        phi = pc;
    }
    let (factor, log_norm) = match last {
        Some(l) => l,
        None => {
            let eta = model.eta(&v, hyper.beta_x);
            let (g, c) = lik.grad_hess_eta(&eta)?;
            let canon: Vec<f64> = g.iter().zip(&c).zip(&eta).map(|((g, c), e)| g + c * e).collect();
            let sys = model.system(hyper, ResponseRows::Pseudo { prec: &c, canon: &canon })?;
            (model.factorize(&sys, true)?, sys.log_norm)
        }
    };
    let d = model.dim() as f64;
    let log_evidence = log_norm + phi + 0.5 * d * (2.0 * PI).ln() - 0.5 * factor.logdet();
    Ok((LogMarginal { log_evidence, log_prior, converged, newton_iterations: iterations }, v, factor))
}

/// Compass search with pattern moves. Returns `(mode, value, evaluations)`.
fn find_mode<F>(f: &F, start: &[f64], cfg: &GridConfig) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = start.len();
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        return Err(Error::NonFiniteDensity);
    }
    let mut step = vec![1.0; d];
    loop {
        if evals > cfg.max_evals {
            return Err(Error::OptimizerBudget { evaluations: evals, last: x });
        }
        let cands: Vec<Vec<f64>> = (0..d)
            .flat_map(|j| {
                [-1.0, 1.0].into_iter().map({
                    let x = &x;
                    let step = &step;
                    move |s| {
                        let mut c = x.clone();
                        c[j] += s * step[j];
                        c
                    }
                })
            })
            .collect();
        let vals: Vec<f64> = cands.par_iter().map(|c| f(c)).collect();
        evals += cands.len();
        let (best, fbest) =
            vals.iter().enumerate().fold((usize::MAX, fx), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if best == usize::MAX || fbest - fx <= 1e-12 * fx.abs().max(1.0) {
            for s in &mut step {
                *s *= 0.5;
            }
            if step.iter().all(|s| *s < cfg.mode_tol) {
                return Ok((x, fx, evals));
            }
            continue;
        }
        let mut dir: Vec<f64> = cands[best].iter().zip(&x).map(|(a, b)| a - b).collect();
        x = cands[best].clone();
        fx = fbest;
        // pattern moves along the improving direction
        loop {
            let c: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let fc = f(&c);
            evals += 1;
            if fc > fx && evals <= cfg.max_evals {
                x = c;
                fx = fc;
                dir.iter_mut().for_each(|v| *v *= 2.0);
            } else {
                break;
            }
        }
    }
}

/// Negative Hessian and gradient of `f` at `x` by central differences.
fn fd_hessian<F>(f: &F, x: &[f64], fx: f64, h: f64) -> (DMatrix<f64>, DVector<f64>, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = x.len();
    let mut offsets: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [-1.0, 1.0] {
            let mut o = vec![0.0; d];
            o[i] = s * h;
            offsets.push(o);
        }
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut o = vec![0.0; d];
                o[i] = si * h;
                o[j] = sj * h;
                offsets.push(o);
            }
        }
    }
    let vals: Vec<f64> = offsets
        .par_iter()
        .map(|o| {
            let p: Vec<f64> = x.iter().zip(o).map(|(a, b)| a + b).collect();
            f(&p)
        })
        .collect();
    let lookup = |o: &[f64]| vals[offsets.iter().position(|k| k.as_slice() == o).expect("offset evaluated")];
    let mut hess = DMatrix::zeros(d, d);
    let mut grad = DVector::zeros(d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = h;
        let fp = lookup(&e);
        e[i] = -h;
        let fm = lookup(&e);
        grad[i] = (fp - fm) / (2.0 * h);
        hess[(i, i)] = -(fp - 2.0 * fx + fm) / (h * h);
        for j in i + 1..d {
            let mut o = vec![0.0; d];
            let mut corner = |si: f64, sj: f64| {
                o[i] = si * h;
                o[j] = sj * h;
                lookup(&o)
            };
            let v = -(corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (hess, grad, offsets.len())
}

/// Eigen-decomposition of the negative Hessian with eigenvalues floored so
/// the standardization stays finite along flat directions.
fn standardize(hess: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = hess.nrows();
    let eig = SymmetricEigen::new(hess.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(1e-6 * max)).collect();
    let transform = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, j)] / lambda[j].sqrt());
    let covariance = &transform * transform.transpose();
    (transform, covariance)
}

/// Symmetric degree-5 Gaussian cubature: `(z, weight)` pairs whose weights
/// integrate polynomials of degree ≤ 5 exactly against `N(0, I)`.
pub fn star_design(d: usize) -> Vec<(Vec<f64>, f64)> {
    let df = d as f64;
    let mut out = vec![(vec![0.0; d], 2.0 / (df + 2.0))];
    let r = (df + 2.0).sqrt();
    let w_axis = (4.0 - df) / (2.0 * (df + 2.0).powi(2));
    for i in 0..d {
        for s in [-1.0, 1.0] {
            let mut z = vec![0.0; d];
            z[i] = s * r;
            out.push((z, w_axis));
        }
    }
    let s2 = ((df + 2.0) / 2.0).sqrt();
    let w_diag = 1.0 / (df + 2.0).powi(2);
    for i in 0..d {
        for j in i + 1..d {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut z = vec![0.0; d];
                z[i] = a * s2;
                z[j] = b * s2;
                out.push((z, w_diag));
            }
        }
    }
    out
}

/// Explores a log density `f` given a payload-producing evaluator `g`
/// (called only at retained points). Generic so the grid logic can be
/// tested on closed-form densities.
pub fn explore_with<F, G, T>(d: usize, f: &F, g: &G, start: &[f64], cfg: &GridConfig) -> Result<Exploration<T>>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Result<(f64, T)> + Sync,
    T: Send,
{
    if d == 0 {
        let (lp, payload) = g(&[])?;
        return Ok(Exploration {
            points: vec![ThetaPoint { theta: Vec::new(), log_post: lp, weight: 1.0 }],
            payloads: vec![payload],
            mode: Vec::new(),
            covariance: DMatrix::zeros(0, 0),
            transform: DMatrix::zeros(0, 0),
            evaluations: 1,
        });
    }
    let (mut mode, mut fmode, mut evals) = find_mode(f, start, cfg)?;
    let (mut hess, grad, n_fd) = fd_hessian(f, &mode, fmode, cfg.fd_step);
    evals += n_fd;
    // one Newton polish from the finite-difference gradient
    if let Some(chol) = hess.clone().cholesky() {
        let step = chol.solve(&grad);
        if step.norm() < 10.0 * cfg.mode_tol.max(cfg.fd_step) {
            let cand: Vec<f64> = mode.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let fc = f(&cand);
            evals += 1;
            if fc > fmode {
                mode = cand;
                fmode = fc;
                let (h2, _, n2) = fd_hessian(f, &mode, fmode, cfg.fd_step);
                hess = h2;
                evals += n2;
            }
        }
    }
    let (transform, covariance) = standardize(&hess);
    let place = |z: &[f64]| -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        let t = &transform * zv;
        mode.iter().zip(t.iter()).map(|(m, v)| m + v).collect()
    };

    let mut points = Vec::new();
    let mut payloads = Vec::new();
    if d <= 3 {
        // flood fill over the lattice `step · k`, k ∈ Z^d, from the mode
        let limit = cfg.max_axis_steps as i64;
        let mut seen: std::collections::BTreeSet<Vec<i64>> = std::collections::BTreeSet::new();
        let mut frontier = vec![vec![0i64; d]];
        seen.insert(vec![0; d]);
        while !frontier.is_empty() {
            let results: Vec<(Vec<i64>, Vec<f64>, f64, Option<T>)> = frontier
                .par_iter()
                .map(|k| {
                    let z: Vec<f64> = k.iter().map(|&v| v as f64 * cfg.step).collect();
                    let theta = place(&z);
                    match g(&theta) {
                        Ok((lp, p)) if lp.is_finite() => (k.clone(), theta, lp, Some(p)),
                        _ => (k.clone(), theta, f64::NEG_INFINITY, None),
                    }
                })
                .collect();
            evals += results.len();
            let mut next = Vec::new();
            for (k, theta, lp, payload) in results {
                let Some(p) = payload else { continue };
                if fmode - lp > cfg.drop {
                    continue;
                }
                points.push(ThetaPoint { theta, log_post: lp, weight: (lp - fmode).exp() });
                payloads.push(p);
                for j in 0..d {
                    for s in [-1i64, 1] {
                        let mut nb = k.clone();
                        nb[j] += s;
                        if nb[j].abs() <= limit && seen.insert(nb.clone()) {
                            next.push(nb);
                        }
                    }
                }
            }
            frontier = next;
        }
    } else {
        let evaluated: Vec<(Vec<f64>, f64, f64, Option<T>)> = star_design(d)
            .into_par_iter()
            .map(|(z, u)| {
                let theta = place(&z);
                let z2: f64 = z.iter().map(|v| v * v).sum();
                match g(&theta) {
                    // importance weight relative to the standard normal design
                    Ok((lp, p)) if lp.is_finite() => (theta, lp, u * (lp + 0.5 * z2 - fmode).exp(), Some(p)),
                    _ => (theta, f64::NEG_INFINITY, 0.0, None),
                }
            })
            .collect();
        evals += evaluated.len();
        for (theta, lp, w, payload) in evaluated {
            if let Some(p) = payload {
                points.push(ThetaPoint { theta, log_post: lp, weight: w });
                payloads.push(p);
            }
        }
    }
    let total: f64 = points.iter().map(|p| p.weight).sum();
    if points.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFiniteDensity);
    }
    for p in &mut points {
        p.weight /= total;
    }
    Ok(Exploration { points, payloads, mode, covariance, transform, evaluations: evals })
}

/// Explores `p(θ | data)` for a compiled model.
pub fn explore(model: &JointModel, cfg: &GridConfig) -> Result<Exploration<Conditional>> {
    let map = ThetaMap::new(model);
    let indices = reported_indices(model, cfg.latent_sites);
    let density = |theta: &[f64]| -> f64 {
        let hyper = map.to_hyper(theta);
        match log_marginal(model, &hyper, cfg.force_laplace) {
            Ok(lm) => lm.log_posterior(),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let payload = |theta: &[f64]| -> Result<(f64, Conditional)> {
        let hyper = map.to_hyper(theta);
        let (lm, mean, factor) = log_marginal_full(model, &hyper, cfg.force_laplace)?;
        Ok((lm.log_posterior(), conditional_moments(&factor, &mean, &indices)))
    };
    explore_with(map.dim(), &density, &payload, &map.start(model), cfg)
}

/// CDF of a weighted Gaussian mixture.
fn mixture_cdf(x: f64, comps: &[(f64, f64, f64)]) -> f64 {
    comps
        .iter()
        .map(|&(w, m, s)| {
            let c = if s > 0.0 {
                Normal::new(m, s).map(|n| n.cdf(x)).unwrap_or(0.5)
            } else if x >= m {
                1.0
            } else {
                0.0
            };
            w * c
        })
        .sum()
}

fn mixture_pdf(x: f64, comps: &[(f64, f64, f64)]) -> f64 {
    comps
        .iter()
        .filter(|c| c.2 > 0.0)
        .map(|&(w, m, s)| w * (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt()))
        .sum()
}

fn mixture_quantile(p: f64, comps: &[(f64, f64, f64)]) -> f64 {
    let lo0 = comps.iter().map(|c| c.1 - 12.0 * c.2).fold(f64::INFINITY, f64::min);
    let hi0 = comps.iter().map(|c| c.1 + 12.0 * c.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    if lo == hi {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mid, comps) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Mixture mean and variance by the law of total variance; variances are
/// clamped at zero (negative cubature weights can undershoot).
pub fn mix_moments(weights: &[f64], means: &[f64], vars: &[f64]) -> (f64, f64) {
    let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let second: f64 = weights.iter().zip(means.iter().zip(vars)).map(|(w, (m, v))| w * (v + m * m)).sum();
    (mean, (second - mean * mean).max(0.0))
}

/// Mixes the conditional posteriors over the explored points.
pub fn posterior_mix(model: &JointModel, exploration: &Exploration<Conditional>, cfg: &GridConfig) -> PosteriorResult {
    let map = ThetaMap::new(model);
    let points = &exploration.points;
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let indices = reported_indices(model, cfg.latent_sites);
    let n_sites = if cfg.latent_sites && model.map.x_latent() { model.n() } else { 0 };

    let latent_summary = |slot: usize, name: &str| -> (ParamSummary, Density) {
        let means: Vec<f64> = exploration.payloads.iter().map(|c| c.mean[slot]).collect();
        let vars: Vec<f64> = exploration.payloads.iter().map(|c| c.var[slot]).collect();
        let (mean, var) = mix_moments(&weights, &means, &vars);
        let comps: Vec<(f64, f64, f64)> =
            weights.iter().zip(means.iter().zip(&vars)).map(|(w, (m, v))| (*w, *m, v.max(0.0).sqrt())).collect();
        let sd = var.sqrt();
        let summary = ParamSummary {
            name: name.to_string(),
            mean,
            sd,
            q025: mixture_quantile(0.025, &comps),
            q975: mixture_quantile(0.975, &comps),
            ess: None,
            rhat: None,
        };
        let density = lattice(name, mean, sd, |x| mixture_pdf(x, &comps));
        (summary, density)
    };

    let mut params = Vec::new();
    let mut densities = Vec::new();
    let mut latent_slot = n_sites;
    for (name, source) in model.parameter_sources() {
        match source {
            ParamSource::Latent(k) => {
                debug_assert_eq!(indices[latent_slot], k);
                let (s, d) = latent_summary(latent_slot, &name);
                latent_slot += 1;
                params.push(s);
                densities.push(d);
            }
            ParamSource::Hyper(h) => {
                let j = map.hypers.iter().position(|k| *k == h).expect("reported hypers are free");
                let (s, d) = hyper_summary(&name, h, j, points, &exploration.covariance, cfg.step);
                params.push(s);
                densities.push(d);
            }
        }
    }

    let latent_x = (0..n_sites)
        .map(|i| {
            let means: Vec<f64> = exploration.payloads.iter().map(|c| c.mean[i]).collect();
            let vars: Vec<f64> = exploration.payloads.iter().map(|c| c.var[i]).collect();
            let (mean, var) = mix_moments(&weights, &means, &vars);
            LatentSummary { site: i, mean, sd: var.sqrt() }
        })
        .collect();

    let mut diagnostics = std::collections::BTreeMap::new();
    diagnostics.insert("grid_points".to_string(), points.len() as f64);
    diagnostics.insert("evaluations".to_string(), exploration.evaluations as f64);
    for (h, m) in map.hypers.iter().zip(&exploration.mode) {
        diagnostics.insert(format!("mode_{}", h.name()), *m);
    }
    PosteriorResult {
        engine: EngineKind::Marginal,
        params,
        latent_x,
        elapsed_secs: 0.0,
        seed: None,
        draws: None,
        diagnostics,
        densities,
    }
}

/// Weighted grid moments on the natural scale; quantiles and density from
/// a kernel mixture on the internal scale.
fn hyper_summary(
    name: &str,
    h: Hyper,
    j: usize,
    points: &[ThetaPoint],
    covariance: &DMatrix<f64>,
    step: f64,
) -> (ParamSummary, Density) {
    let natural = |t: f64| if h.is_positive() { t.exp() } else { t };
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let vals: Vec<f64> = points.iter().map(|p| natural(p.theta[j])).collect();
    let (mean, var) = mix_moments(&weights, &vals, &vec![0.0; vals.len()]);
    let bw = 0.5 * step * covariance[(j, j)].max(0.0).sqrt();
    let comps: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.weight.max(0.0), p.theta[j], bw)).collect();
    let total: f64 = comps.iter().map(|c| c.0).sum();
    let comps: Vec<(f64, f64, f64)> = comps.into_iter().map(|(w, m, s)| (w / total, m, s)).collect();
    let summary = ParamSummary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        q025: natural(mixture_quantile(0.025, &comps)),
        q975: natural(mixture_quantile(0.975, &comps)),
        ess: None,
        rhat: None,
    };
    let (tm, tv) = mix_moments(&comps.iter().map(|c| c.0).collect::<Vec<_>>(), &comps.iter().map(|c| c.1).collect::<Vec<_>>(), &vec![bw * bw; comps.len()]);
    let inner = lattice(name, tm, tv.sqrt(), |t| mixture_pdf(t, &comps));
    let density = if h.is_positive() {
        // change of variables to the natural scale
        let x: Vec<f64> = inner.x.iter().map(|t| t.exp()).collect();
        let density = inner.density.iter().zip(&x).map(|(d, x)| d / x).collect();
        Density { name: name.to_string(), x, density }
    } else {
        inner
    };
    (summary, density)
}

fn lattice(name: &str, center: f64, sd: f64, pdf: impl Fn(f64) -> f64) -> Density {
    let half = 4.0 * if sd > 0.0 { sd } else { 1e-8 };
    let x: Vec<f64> =
        (0..LATTICE).map(|k| center - half + 2.0 * half * k as f64 / (LATTICE - 1) as f64).collect();
    let density = x.iter().map(|&v| pdf(v)).collect();
    Density { name: name.to_string(), x, density }
}

/// Explores and mixes; the full marginal-engine fit.
pub fn fit_marginal(model: &JointModel, cfg: &GridConfig) -> Result<PosteriorResult> {
    let start = Instant::now();
    let exploration = explore(model, cfg)?;
    let mut res = posterior_mix(model, &exploration, cfg);
    res.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(res)
}
