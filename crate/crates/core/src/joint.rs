//! Compiled joint model: the combined regression / Berkson / classical /
//! imputation hierarchy written as Gaussian observations of linear
//! combinations of the latent vector.
//!
//! Every sub-model contributes rows `value = aᵀv + noise` with noise
//! precision `prec`:
//!
//! ```text
//! response    y_i = β0 + z_iᵀβz + βx x_i            τ_y
//! Berkson     0   = x_i − r_i        (w_i = x_i)     τ_ub d_b[i]
//! classical   w_ij = r_i                             τ_uc d_c[i,j]   (observed cells only)
//! imputation  0   = r_i − α0 − z̃_iᵀα  (w_i = α0 + z̃_iᵀα)  τ_x d_x[i]
//! prior       m_j = v_j                              p_j             (coefficients)
//! ```
//!
//! The structural equations enter as zero-valued observations; with a flat
//! base measure on the sites this reproduces the hierarchical densities.
//! `βx` multiplies a latent `x`, so it is a parameter of the row
//! coefficients unless `x` is observed, in which case it is a latent slot.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Response};
use crate::error::{Error, Result};
use crate::gmrf::{factorize_with, CholFactor, SparseSpd, Symbolic, TripletAssembler};
use crate::index::{build_index_map, LatentIndexMap, RSite};
use crate::likelihood::{Family, ResponseLik};
use crate::spec::{validate, GaussianPrior, Likelihood, ModelSpec, PositivePrior};

/// Non-Gaussian parameters. Inactive or fixed entries carry their fixed
/// value (or 1 when the layer is absent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub beta_x: f64,
    pub tau_y: f64,
    pub tau_uc: f64,
    pub tau_ub: f64,
    pub tau_x: f64,
    pub kappa: f64,
}

impl HyperState {
    pub fn all_positive(&self) -> bool {
        [self.tau_y, self.tau_uc, self.tau_ub, self.tau_x, self.kappa].iter().all(|v| *v > 0.0 && v.is_finite())
    }
}

/// Named entries of [`HyperState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hyper {
    BetaX,
    TauY,
    TauUc,
    TauUb,
    TauX,
    Kappa,
}

impl Hyper {
    pub fn name(&self) -> &'static str {
        match self {
            Hyper::BetaX => "beta_x",
            Hyper::TauY => "tau_y",
            Hyper::TauUc => "tau_uc",
            Hyper::TauUb => "tau_ub",
            Hyper::TauX => "tau_x",
            Hyper::Kappa => "kappa",
        }
    }

    /// Positive parameters are explored on the log scale.
    pub fn is_positive(&self) -> bool {
        !matches!(self, Hyper::BetaX)
    }
}

impl HyperState {
    pub fn get(&self, h: Hyper) -> f64 {
        match h {
            Hyper::BetaX => self.beta_x,
            Hyper::TauY => self.tau_y,
            Hyper::TauUc => self.tau_uc,
            Hyper::TauUb => self.tau_ub,
            Hyper::TauX => self.tau_x,
            Hyper::Kappa => self.kappa,
        }
    }

    pub fn set(&mut self, h: Hyper, value: f64) {
        match h {
            Hyper::BetaX => self.beta_x = value,
            Hyper::TauY => self.tau_y = value,
            Hyper::TauUc => self.tau_uc = value,
            Hyper::TauUb => self.tau_ub = value,
            Hyper::TauX => self.tau_x = value,
            Hyper::Kappa => self.kappa = value,
        }
    }
}

/// Storage of a reported parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSource {
    Latent(usize),
    Hyper(Hyper),
}

impl ParamSource {
    pub fn read(&self, v: &[f64], hyper: &HyperState) -> f64 {
        match *self {
            ParamSource::Latent(k) => v[k],
            ParamSource::Hyper(h) => hyper.get(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Response,
    Berkson,
    Classical,
    Imputation,
    Prior,
}

/// How response rows enter a Gaussian system.
#[derive(Debug, Clone, Copy)]
pub enum ResponseRows<'a> {
    Omit,
    /// Gaussian response with precision `hyper.tau_y`.
    Gaussian,
    /// Quadratic expansion of a non-Gaussian likelihood: row `i` adds
    /// `prec[i] a aᵀ` to the precision and `canon[i] a` to the canonical mean.
    Pseudo { prec: &'a [f64], canon: &'a [f64] },
}

/// Precision, canonical mean and the normalising constant of the rows
/// that have a proper value (`Σ ½ log(prec / 2π)`).
#[derive(Debug, Clone)]
pub struct GaussianSystem {
    pub q: SparseSpd,
    pub b: Vec<f64>,
    pub log_norm: f64,
}

#[derive(Debug)]
struct Structure {
    assembler: TripletAssembler,
    symbolic: Symbolic,
}

#[derive(Debug)]
pub struct JointModel {
    pub spec: ModelSpec,
    pub map: LatentIndexMap,
    n: usize,
    p: usize,
    q: usize,
    z: Vec<f64>,
    zt: Vec<f64>,
    y: Vec<f64>,
    lik: ResponseLik,
    /// First replicate; only read where it is observed.
    w_first: Vec<f64>,
    w_init: Vec<f64>,
    cells: Vec<(usize, f64, f64)>,
    d_b: Vec<f64>,
    d_x: Vec<f64>,
    coef_names: Vec<(usize, String)>,
    coef_priors: Vec<(usize, GaussianPrior)>,
    with_response: OnceLock<Structure>,
    without_response: OnceLock<Structure>,
}

impl JointModel {
    /// Validates and compiles a model. Fails with the validation report if
    /// the model is not well-posed.
    pub fn new(spec: &ModelSpec, data: &Dataset) -> Result<Self> {
        validate(spec, data).into_result()?;
        let map = build_index_map(spec, data);
        let n = data.n();
        let p = data.z.ncols();
        let q = data.z_tilde.ncols();
        let dense = |rows: &[Vec<Option<f64>>]| rows.iter().flatten().map(|v| v.expect("validated")).collect();
        let z: Vec<f64> = dense(&data.z.rows);
        let zt: Vec<f64> = dense(&data.z_tilde.rows);

        let (y, family) = match &data.response {
            Response::Gaussian { y, .. } => {
                (y.iter().map(|v| v.unwrap_or(0.0)).collect(), Family::Gaussian { tau_y: spec.priors.tau_y.mean() })
            }
            Response::Survival { .. } => (vec![0.0; n], Family::Weibull { kappa: spec.priors.kappa.mean() }),
        };
        let lik = ResponseLik::new(family, data)?;

        let overall = data.w.overall_mean().unwrap_or(0.0);
        let w_first = data.w.reps.iter().map(|r| r.first().copied().flatten().unwrap_or(f64::NAN)).collect();
        let w_init = (0..n).map(|i| data.w.row_mean(i).unwrap_or(overall)).collect();

        let scaling = spec.scaling_for(data);
        let cells = scaling
            .included_cells()
            .map(|(i, j, d)| (i, data.w.reps[i][j].expect("included cells are observed"), d))
            .collect();

        let mut coef_names = vec![(map.beta.at(0), "beta0".to_string())];
        for (k, name) in data.z.names.iter().enumerate() {
            coef_names.push((map.beta.at(k + 1), format!("beta_{name}")));
        }
        if let Some(slot) = map.beta_x {
            coef_names.push((slot, "beta_x".to_string()));
        }
        if let Some(a) = map.alpha {
            coef_names.push((a.at(0), "alpha0".to_string()));
            for (k, name) in data.z_tilde.names.iter().enumerate() {
                coef_names.push((a.at(k + 1), format!("alpha_{name}")));
            }
        }
        let coef_priors = coef_names.iter().map(|(i, name)| (*i, spec.priors.coefficient(name))).collect();

        Ok(Self {
            spec: spec.clone(),
            map,
            n,
            p,
            q,
            z,
            zt,
            y,
            lik,
            w_first,
            w_init,
            cells,
            d_b: scaling.d_b,
            d_x: scaling.d_x,
            coef_names,
            coef_priors,
            with_response: OnceLock::new(),
            without_response: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.map.total
    }

    pub fn n_regression_covariates(&self) -> usize {
        self.p
    }

    pub fn likelihood(&self) -> Likelihood {
        self.spec.likelihood
    }

    /// The response model at the given hyperparameters.
    pub fn response_lik(&self, hyper: &HyperState) -> Result<ResponseLik> {
        let mut lik = self.lik.clone();
        match self.spec.likelihood {
            Likelihood::GaussianLinear => lik.set_tau_y(hyper.tau_y)?,
            Likelihood::WeibullSurvival => lik.set_kappa(hyper.kappa)?,
        }
        Ok(lik)
    }

    pub fn response_included(&self) -> &[bool] {
        self.lik.include()
    }

    /// Observed Gaussian responses (zero where missing).
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn z_tilde_row(&self, i: usize) -> &[f64] {
        &self.zt[i * self.q..(i + 1) * self.q]
    }

    /// Positive hyperparameters that are active in this model, with their
    /// priors (fixed ones included).
    pub fn active_precisions(&self) -> Vec<(Hyper, PositivePrior)> {
        let pr = &self.spec.priors;
        let mut out = Vec::new();
        match self.spec.likelihood {
            Likelihood::GaussianLinear => out.push((Hyper::TauY, pr.tau_y)),
            Likelihood::WeibullSurvival => out.push((Hyper::Kappa, pr.kappa)),
        }
        if self.spec.layers.classical {
            out.push((Hyper::TauUc, pr.tau_uc));
        }
        if self.spec.layers.berkson {
            out.push((Hyper::TauUb, pr.tau_ub));
        }
        if self.map.alpha.is_some() {
            out.push((Hyper::TauX, pr.tau_x));
        }
        out
    }

    /// Hyperparameters with a prior to integrate over: `beta_x` when `x` is
    /// latent, then the active non-fixed positive parameters.
    pub fn free_hypers(&self) -> Vec<Hyper> {
        let mut out = Vec::new();
        if self.map.x_latent() {
            out.push(Hyper::BetaX);
        }
        out.extend(self.active_precisions().into_iter().filter(|(_, p)| !p.is_fixed()).map(|(h, _)| h));
        out
    }

    pub fn positive_prior(&self, h: Hyper) -> Option<PositivePrior> {
        self.active_precisions().into_iter().find(|(k, _)| *k == h).map(|(_, p)| p)
    }

    /// Log prior density of the free hyperparameters on the internal scale
    /// (log for positives, with Jacobian).
    pub fn log_hyper_prior(&self, hyper: &HyperState) -> f64 {
        let mut lp = 0.0;
        for h in self.free_hypers() {
            lp += match h {
                Hyper::BetaX => self.beta_x_prior().log_density(hyper.beta_x),
                _ => self.positive_prior(h).expect("free hypers are active").log_density_log_scale(hyper.get(h).ln()),
            };
        }
        lp
    }

    /// Starting hyperparameters: prior means, fixed values, 1 for inactive
    /// precisions and a free Weibull shape, `beta_x` at its prior mean.
    pub fn initial_hyper(&self) -> HyperState {
        let mut h = HyperState {
            beta_x: self.beta_x_prior().mean,
            tau_y: 1.0,
            tau_uc: 1.0,
            tau_ub: 1.0,
            tau_x: 1.0,
            kappa: 1.0,
        };
        for (k, prior) in self.active_precisions() {
            // a vague shape prior has a huge mean; start from the exponential model
            if k == Hyper::Kappa && !prior.is_fixed() {
                continue;
            }
            h.set(k, prior.mean());
        }
        h
    }

    /// All reported scalar parameters and where their values live:
    /// coefficients in layout order (with `beta_x` after the regression
    /// block when it is a hyperparameter), then the free positive
    /// hyperparameters.
    pub fn parameter_sources(&self) -> Vec<(String, ParamSource)> {
        let mut out = Vec::new();
        for (k, name) in &self.coef_names {
            out.push((name.clone(), ParamSource::Latent(*k)));
            if self.map.x_latent() && *k + 1 == self.map.beta.offset + self.map.beta.len {
                out.push(("beta_x".to_string(), ParamSource::Hyper(Hyper::BetaX)));
            }
        }
        for h in self.free_hypers().into_iter().filter(Hyper::is_positive) {
            out.push((h.name().to_string(), ParamSource::Hyper(h)));
        }
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameter_sources().into_iter().map(|(n, _)| n).collect()
    }

    /// Named coefficient slots in layout order.
    pub fn coefficient_names(&self) -> &[(usize, String)] {
        &self.coef_names
    }

    pub fn coefficient_priors(&self) -> &[(usize, GaussianPrior)] {
        &self.coef_priors
    }

    /// Prior of `beta_x` (used when it is a hyperparameter).
    pub fn beta_x_prior(&self) -> GaussianPrior {
        self.spec.priors.coefficient("beta_x")
    }

    /// Included classical-error cells `(site, value, scaling)`.
    pub fn classical_cells(&self) -> &[(usize, f64, f64)] {
        &self.cells
    }

    pub fn d_b(&self) -> &[f64] {
        &self.d_b
    }

    pub fn d_x(&self) -> &[f64] {
        &self.d_x
    }

    pub fn w_first(&self, i: usize) -> f64 {
        self.w_first[i]
    }

    /// Value of `x_i` in the latent vector, or the observed covariate.
    pub fn x_value(&self, v: &[f64], i: usize) -> f64 {
        match self.map.x_index(i) {
            Some(k) => v[k],
            None => self.w_first[i],
        }
    }

    pub fn r_value(&self, v: &[f64], i: usize) -> f64 {
        match self.map.r_site(i) {
            RSite::Latent(k) => v[k],
            RSite::Observed => self.w_first[i],
        }
    }

    /// Deterministic start: sites at the observed measurement (row mean of
    /// the replicates, overall mean when all are missing), coefficients 0.
    pub fn initial_latent(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for i in 0..self.n {
            if let Some(k) = self.map.x_index(i) {
                v[k] = self.w_init[i];
            }
            if let RSite::Latent(k) = self.map.r_site(i) {
                v[k] = self.w_init[i];
            }
        }
        v
    }

    /// Linear predictor `η = β0 + Zβz + βx x`.
    pub fn eta(&self, v: &[f64], beta_x: f64) -> Vec<f64> {
        let beta = &v[self.map.beta.range()];
        let bx = self.map.beta_x.map_or(beta_x, |k| v[k]);
        (0..self.n)
            .map(|i| beta[0] + dot(self.z_row(i), &beta[1..]) + bx * self.x_value(v, i))
            .collect()
    }

    /// Visits every row in a fixed order. The callback receives the kind,
    /// the sparse coefficient vector, the precision, the observed value
    /// (NaN for pseudo rows) and the canonical contribution `prec · value`.
    pub fn visit_rows(
        &self,
        hyper: &HyperState,
        response: ResponseRows<'_>,
        mut f: impl FnMut(RowKind, &[(usize, f64)], f64, f64, f64),
    ) {
        let map = &self.map;
        let mut buf: Vec<(usize, f64)> = Vec::with_capacity(2 + self.p.max(self.q));

        if !matches!(response, ResponseRows::Omit) {
            let include = self.lik.include();
            for i in 0..self.n {
                if !include[i] {
                    continue;
                }
                buf.clear();
                buf.push((map.beta.at(0), 1.0));
                for (k, &zk) in self.z_row(i).iter().enumerate() {
                    buf.push((map.beta.at(k + 1), zk));
                }
                match (map.x_index(i), map.beta_x) {
                    (Some(xi), _) => buf.push((xi, hyper.beta_x)),
                    (None, Some(slot)) => buf.push((slot, self.w_first[i])),
                    (None, None) => unreachable!("observed x always has a beta_x slot"),
                }
                match response {
                    ResponseRows::Gaussian => f(RowKind::Response, &buf, hyper.tau_y, self.y[i], hyper.tau_y * self.y[i]),
                    ResponseRows::Pseudo { prec, canon } => f(RowKind::Response, &buf, prec[i], f64::NAN, canon[i]),
                    ResponseRows::Omit => unreachable!(),
                }
            }
        }

        if self.spec.layers.berkson {
            for i in 0..self.n {
                let xi = map.x_index(i).expect("Berkson layer has a latent x");
                let prec = hyper.tau_ub * self.d_b[i];
                buf.clear();
                buf.push((xi, 1.0));
                match map.r_site(i) {
                    RSite::Latent(ri) => {
                        buf.push((ri, -1.0));
                        f(RowKind::Berkson, &buf, prec, 0.0, 0.0);
                    }
                    RSite::Observed => f(RowKind::Berkson, &buf, prec, self.w_first[i], prec * self.w_first[i]),
                }
            }
        }

        if self.spec.layers.classical {
            for &(i, w, d) in &self.cells {
                let RSite::Latent(ri) = map.r_site(i) else { unreachable!("classical layer has a latent r") };
                let prec = hyper.tau_uc * d;
                buf.clear();
                buf.push((ri, 1.0));
                f(RowKind::Classical, &buf, prec, w, prec * w);
            }
        }

        if let Some(alpha) = map.alpha {
            for i in 0..self.n {
                let prec = hyper.tau_x * self.d_x[i];
                buf.clear();
                match map.r_site(i) {
                    RSite::Latent(ri) => {
                        buf.push((ri, 1.0));
                        buf.push((alpha.at(0), -1.0));
                        for (k, &zk) in self.z_tilde_row(i).iter().enumerate() {
                            buf.push((alpha.at(k + 1), -zk));
                        }
                        f(RowKind::Imputation, &buf, prec, 0.0, 0.0);
                    }
                    RSite::Observed => {
                        buf.push((alpha.at(0), 1.0));
                        for (k, &zk) in self.z_tilde_row(i).iter().enumerate() {
                            buf.push((alpha.at(k + 1), zk));
                        }
                        let w = self.w_first[i];
                        f(RowKind::Imputation, &buf, prec, w, prec * w);
                    }
                }
            }
        }

        for &(j, prior) in &self.coef_priors {
            buf.clear();
            buf.push((j, 1.0));
            f(RowKind::Prior, &buf, prior.precision, prior.mean, prior.precision * prior.mean);
        }
    }

    fn structure(&self, with_response: bool) -> Result<&Structure> {
        let cell = if with_response { &self.with_response } else { &self.without_response };
        if let Some(s) = cell.get() {
            return Ok(s);
        }
        let dummy = HyperState { beta_x: 1.0, tau_y: 1.0, tau_uc: 1.0, tau_ub: 1.0, tau_x: 1.0, kappa: 1.0 };
        let mut coords = Vec::new();
        let ones = vec![1.0; self.n];
        let response = if with_response { ResponseRows::Pseudo { prec: &ones, canon: &ones } } else { ResponseRows::Omit };
        self.visit_rows(&dummy, response, |_, entries, _, _, _| {
            for (a, &(ia, _)) in entries.iter().enumerate() {
                for &(ib, _) in &entries[a..] {
                    coords.push((ia, ib));
                }
            }
        });
        let assembler = TripletAssembler::new(self.dim(), coords)?;
        let pattern = assembler.assemble(&vec![1.0; assembler.len()])?;
        let symbolic = Symbolic::analyze(&pattern);
        Ok(cell.get_or_init(|| Structure { assembler, symbolic }))
    }

    /// Precision and canonical mean of the latent field given `hyper`.
    pub fn system(&self, hyper: &HyperState, response: ResponseRows<'_>) -> Result<GaussianSystem> {
        let with_response = !matches!(response, ResponseRows::Omit);
        let structure = self.structure(with_response)?;
        let mut values = Vec::with_capacity(structure.assembler.len());
        let mut b = vec![0.0; self.dim()];
        let mut log_norm = 0.0;
        self.visit_rows(hyper, response, |_, entries, prec, value, canon| {
            for (a, &(ia, ca)) in entries.iter().enumerate() {
                for &(_, cb) in &entries[a..] {
                    values.push(prec * ca * cb);
                }
                b[ia] += canon * ca;
            }
            if !value.is_nan() {
                log_norm += 0.5 * (prec / (2.0 * PI)).ln();
            }
        });
        let q = structure.assembler.assemble(&values)?;
        Ok(GaussianSystem { q, b, log_norm })
    }

    /// Factorizes a system produced by [`JointModel::system`], reusing the
    /// cached symbolic analysis.
    pub fn factorize(&self, sys: &GaussianSystem, with_response: bool) -> Result<CholFactor> {
        factorize_with(&self.structure(with_response)?.symbolic, &sys.q)
    }

    /// `Σ prec (value − aᵀv)²` over rows with a proper value.
    pub fn residual_sum(&self, v: &[f64], hyper: &HyperState, response: ResponseRows<'_>) -> f64 {
        let mut s = 0.0;
        self.visit_rows(hyper, response, |_, entries, prec, value, _| {
            if !value.is_nan() {
                let fitted: f64 = entries.iter().map(|&(k, c)| c * v[k]).sum();
                s += prec * (value - fitted).powi(2);
            }
        });
        s
    }

    /// Residual sums and counts per layer, for conjugate precision updates.
    pub fn layer_residuals(&self, v: &[f64], hyper: &HyperState) -> LayerResiduals {
        let mut out = LayerResiduals::default();
        let response = match self.spec.likelihood {
            Likelihood::GaussianLinear => ResponseRows::Gaussian,
            Likelihood::WeibullSurvival => ResponseRows::Omit,
        };
        let unit = HyperState { tau_y: 1.0, tau_uc: 1.0, tau_ub: 1.0, tau_x: 1.0, ..*hyper };
        self.visit_rows(&unit, response, |kind, entries, prec, value, _| {
            let fitted: f64 = entries.iter().map(|&(k, c)| c * v[k]).sum();
            let ss = prec * (value - fitted).powi(2);
            let slot = match kind {
                RowKind::Response => &mut out.response,
                RowKind::Berkson => &mut out.berkson,
                RowKind::Classical => &mut out.classical,
                RowKind::Imputation => &mut out.imputation,
                RowKind::Prior => return,
            };
            slot.0 += ss;
            slot.1 += 1;
        });
        out
    }

    /// Exact Gaussian conditional of the latent field for a Gaussian
    /// response: `(log p(data | θ), mean, factor)`.
    pub fn gaussian_evidence(&self, hyper: &HyperState) -> Result<(f64, Vec<f64>, CholFactor)> {
        if self.spec.likelihood != Likelihood::GaussianLinear {
            return Err(Error::InvalidArgument("exact evidence requires a Gaussian response".into()));
        }
        let sys = self.system(hyper, ResponseRows::Gaussian)?;
        let factor = self.factorize(&sys, true)?;
        let mean = factor.solve(&sys.b)?;
        let s = self.residual_sum(&mean, hyper, ResponseRows::Gaussian);
        let d = self.dim() as f64;
        let log_ev = sys.log_norm - 0.5 * s + 0.5 * d * (2.0 * PI).ln() - 0.5 * factor.logdet();
        Ok((log_ev, mean, factor))
    }
}

/// `(scaled residual sum of squares, count)` per layer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LayerResiduals {
    pub response: (f64, usize),
    pub berkson: (f64, usize),
    pub classical: (f64, usize),
    pub imputation: (f64, usize),
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Measurements};
    use crate::spec::ErrorLayers;

    fn toy(w: Vec<Option<f64>>) -> Dataset {
        let n = w.len();
        let z: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
        Dataset {
            response: Response::Gaussian { name: "y".into(), y: (0..n).map(|i| Some(1.0 + i as f64)).collect() },
            w: Measurements::single("w", w),
            z: Covariates::from_columns(&["z"], &[z.clone()]),
            z_tilde: Covariates::from_columns(&["z"], &[z]),
        }
    }

    fn hyper() -> HyperState {
        HyperState { beta_x: 0.7, tau_y: 2.0, tau_uc: 3.0, tau_ub: 4.0, tau_x: 0.5, kappa: 1.0 }
    }

    #[test]
    fn residual_identity_matches_quadratic_form() {
        // S(v) = S(μ) + (v − μ)ᵀ Q (v − μ) for any v
        let data = toy(vec![Some(0.3), None, Some(1.2), Some(-0.4)]);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::BOTH, true);
        let model = JointModel::new(&spec, &data).unwrap();
        let h = hyper();
        let sys = model.system(&h, ResponseRows::Gaussian).unwrap();
        let f = model.factorize(&sys, true).unwrap();
        let mu = f.solve(&sys.b).unwrap();
        let v: Vec<f64> = (0..model.dim()).map(|k| mu[k] + 0.1 * (k as f64).sin()).collect();
        let diff: Vec<f64> = v.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let lhs = model.residual_sum(&v, &h, ResponseRows::Gaussian);
        let rhs = model.residual_sum(&mu, &h, ResponseRows::Gaussian) + sys.q.quad_form(&diff).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn missing_cells_add_no_classical_rows() {
        let data = toy(vec![Some(0.3), None, Some(1.2)]);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::CLASSICAL, true);
        let model = JointModel::new(&spec, &data).unwrap();
        let mut classical = 0;
        model.visit_rows(&hyper(), ResponseRows::Gaussian, |kind, _, _, _, _| {
            if kind == RowKind::Classical {
                classical += 1;
            }
        });
        assert_eq!(classical, 2);
    }

    #[test]
    fn layer_residual_counts() {
        let data = toy(vec![Some(0.3), None, Some(1.2)]);
        let mut spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::BOTH, true);
        spec.priors.tau_uc = PositivePrior::Gamma { shape: 1.0, rate: 1.0 };
        let model = JointModel::new(&spec, &data).unwrap();
        let r = model.layer_residuals(&model.initial_latent(), &hyper());
        assert_eq!((r.response.1, r.berkson.1, r.classical.1, r.imputation.1), (3, 3, 2, 3));
    }

    #[test]
    fn parameter_names_follow_layout() {
        let data = toy(vec![Some(0.3), None, Some(1.2)]);
        let mut spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::BOTH, true);
        spec.priors.tau_ub = PositivePrior::Gamma { shape: 1.0, rate: 1.0 };
        let model = JointModel::new(&spec, &data).unwrap();
        assert_eq!(
            model.parameter_names(),
            ["beta0", "beta_z", "beta_x", "alpha0", "alpha_z", "tau_y", "tau_ub", "tau_x"]
        );
        assert_eq!(model.free_hypers(), [Hyper::BetaX, Hyper::TauY, Hyper::TauUb, Hyper::TauX]);
        let h = model.initial_hyper();
        assert_eq!((h.tau_uc, h.tau_ub), (1.0, 1.0));
    }

    #[test]
    fn invalid_model_is_refused() {
        let data = toy(vec![Some(0.3), None]);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear);
        assert!(matches!(JointModel::new(&spec, &data), Err(Error::Validation(_))));
    }
}
