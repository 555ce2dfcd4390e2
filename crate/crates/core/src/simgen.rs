//! Seeded data generators.
//!
//! Every replicate draws from its own ChaCha stream (`seed`, stream =
//! replicate index), so a replicate does not depend on which others were
//! generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, Measurements, Response};
use crate::error::{Error, Result};

/// Exposure model of the simulation: `r = 1 + 2 z + ε_r`.
pub const R_INTERCEPT: f64 = 1.0;
pub const R_SLOPE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub replicates: usize,
    /// `(beta0, beta_x, beta_z)`.
    pub beta: [f64; 3],
    /// Residual precision of the response.
    pub tau_y: f64,
    pub miss_intercept: f64,
    pub miss_slope: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n: 1000, replicates: 100, beta: [1.0, 2.0, 2.0], tau_y: 1.0, miss_intercept: -1.5, miss_slope: 0.5, seed: 2024 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replicates == 0 {
            return Err(Error::InvalidArgument("n and replicates must be positive".into()));
        }
        if !(self.tau_y > 0.0 && self.tau_y.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau_y must be positive, got {}", self.tau_y)));
        }
        Ok(())
    }
}

/// Values available only to oracles (never to the fitted models' inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub x_true: Vec<f64>,
    pub r_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReplicate {
    pub index: usize,
    pub data: Dataset,
    pub oracle: Oracle,
}

/// `P(w_i missing)` under the logistic MAR rule.
pub fn missing_prob_with(z: f64, intercept: f64, slope: f64) -> f64 {
    let a = intercept + slope * z;
    // numerically stable logistic
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn missing_prob(z: f64) -> f64 {
    missing_prob_with(z, -1.5, 0.5)
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One replicate of the measurement-error / missing-data simulation.
pub fn simulate_replicate(cfg: &SimConfig, rep: usize) -> SimReplicate {
    let mut rng = stream(cfg.seed, rep as u64);
    let n = cfg.n;
    let sd_y = 1.0 / cfg.tau_y.sqrt();
    let (mut z, mut x, mut r, mut w, mut y) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let zi: f64 = rng.sample(StandardNormal);
        let ri = R_INTERCEPT + R_SLOPE * zi + rng.sample::<f64, _>(StandardNormal);
        let xi = ri + rng.sample::<f64, _>(StandardNormal);
        let wi = ri + rng.sample::<f64, _>(StandardNormal);
        let missing = rng.random::<f64>() < missing_prob_with(zi, cfg.miss_intercept, cfg.miss_slope);
        let yi = cfg.beta[0] + cfg.beta[1] * xi + cfg.beta[2] * zi + sd_y * rng.sample::<f64, _>(StandardNormal);
        z.push(zi);
        r.push(ri);
        x.push(xi);
        w.push((!missing).then_some(wi));
        y.push(Some(yi));
    }
    let data = Dataset {
        response: Response::Gaussian { name: "y".into(), y },
        w: Measurements::single("w", w),
        z: Covariates::from_columns(&["z"], &[z.clone()]),
        z_tilde: Covariates::from_columns(&["z"], &[z]),
    };
    SimReplicate { index: rep, data, oracle: Oracle { x_true: x, r_true: r } }
}

/// Large-sample limit of the complete-case regression of `y` on `(1, w, z)`:
/// `E[y | w, z] = beta0 + beta_x E[r | w, z] + beta_z z` with
/// `E[r | w, z] = (1 + 2z + w) / 2` for unit-variance layers. Missingness
/// depends on `z` only, so conditioning on being observed changes nothing.
/// Returned as `(beta0, beta_w, beta_z)`.
pub fn naive_limit(cfg: &SimConfig) -> [f64; 3] {
    let [b0, bx, bz] = cfg.beta;
    [b0 + bx * R_INTERCEPT / 2.0, bx / 2.0, bz + bx * R_SLOPE / 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullSimConfig {
    pub n: usize,
    pub kappa: f64,
    /// `(beta0, beta_x, beta_z1, beta_z2)`.
    pub beta: [f64; 4],
    /// Target fraction of censored observations, in `[0, 1)`.
    pub censor_rate: f64,
    /// Precision of classical error on `x`; `None` observes `x` exactly.
    pub me_precision: Option<f64>,
    /// Replicate measurements of `x` when it is observed with error.
    pub w_replicates: usize,
    pub seed: u64,
}

impl Default for WeibullSimConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            kappa: 1.0,
            beta: [-1.0, 0.5, 0.3, -0.4],
            censor_rate: 0.3,
            me_precision: None,
            w_replicates: 1,
            seed: 11,
        }
    }
}

/// Weibull survival data with hazard `κ t^(κ−1) exp(κ η)`. Covariates
/// `x, z1 ~ N(0, 1)`, `z2 ~ Bernoulli(0.5)`; `x` is drawn from
/// `x = 0.5 z1 + N(0, 1)` when measured with error.
pub fn simulate_weibull_with(cfg: &WeibullSimConfig, rep: usize) -> Result<Dataset> {
    if !(cfg.kappa > 0.0 && cfg.kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {}", cfg.kappa)));
    }
    if !(0.0..1.0).contains(&cfg.censor_rate) {
        return Err(Error::InvalidArgument(format!("censor rate must be in [0, 1), got {}", cfg.censor_rate)));
    }
    if cfg.n == 0 || cfg.w_replicates == 0 {
        return Err(Error::InvalidArgument("n and w_replicates must be positive".into()));
    }
    let mut rng = stream(cfg.seed, rep as u64);
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let n = cfg.n;
    let mut x = Vec::with_capacity(n);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let xi = if cfg.me_precision.is_some() { 0.5 * a + rng.sample::<f64, _>(StandardNormal) } else { rng.sample(StandardNormal) };
        let b = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
        let eta = cfg.beta[0] + cfg.beta[1] * xi + cfg.beta[2] * a + cfg.beta[3] * b;
        // S(t) = exp(-(t e^η)^κ)  ⇒  t = (−log U)^{1/κ} / e^η
        let u: f64 = 1.0 - rng.random::<f64>();
        t.push((-u.ln()).powf(1.0 / cfg.kappa) / eta.exp());
        x.push(xi);
        z1.push(a);
        z2.push(b);
    }
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let (time, event) = censor(&t, &e, cfg.censor_rate);

    let w = match cfg.me_precision {
        None => Measurements::single("x", x.iter().map(|v| Some(*v)).collect()),
        Some(tau) => {
            let sd = 1.0 / tau.sqrt();
            let reps = x
                .iter()
                .map(|xi| (0..cfg.w_replicates).map(|_| Some(xi + sd * rng.sample::<f64, _>(StandardNormal))).collect())
                .collect();
            Measurements { name: "w".into(), reps }
        }
    };
    Ok(Dataset {
        response: Response::Survival { time: time.into_iter().map(Some).collect(), event },
        w,
        z: Covariates::from_columns(&["z1", "z2"], &[z1.clone(), z2]),
        z_tilde: Covariates::from_columns(&["z1"], &[z1]),
    })
}

/// Convenience form with covariates observed exactly.
pub fn simulate_weibull(n: usize, kappa: f64, beta: [f64; 4], censor_rate: f64, seed: u64) -> Result<Dataset> {
    simulate_weibull_with(&WeibullSimConfig { n, kappa, beta, censor_rate, seed, ..Default::default() }, 0)
}

/// Applies exponential censoring `C = E / λ` with the rate `λ` chosen by
/// bisection so the empirical censored fraction matches `rate`.
fn censor(t: &[f64], e: &[f64], rate: f64) -> (Vec<f64>, Vec<bool>) {
    if rate <= 0.0 {
        return (t.to_vec(), vec![true; t.len()]);
    }
    let frac = |lambda: f64| t.iter().zip(e).filter(|(t, e)| *e / lambda < **t).count() as f64 / t.len() as f64;
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while frac(hi) < rate && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if frac(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = hi;
    t.iter().zip(e).map(|(t, e)| {
        let c = e / lambda;
        if c < *t { (c, false) } else { (*t, true) }
    }).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::mean_sd;

    fn big() -> SimConfig {
        SimConfig { n: 100_000, replicates: 1, ..Default::default() }
    }

    fn observed_w(rep: &SimReplicate) -> Vec<f64> {
        rep.data.w.reps.iter().filter_map(|r| r[0]).collect()
    }

    #[test]
    fn missing_probability_examples() {
        assert!((missing_prob(0.0) - 0.18243).abs() < 5e-6);
        assert_eq!(missing_prob(3.0), 0.5);
        assert!(missing_prob(-1e6) < 1e-300);
    }

    #[test]
    fn replicate_is_reproducible_and_order_free() {
        let cfg = SimConfig { n: 50, ..Default::default() };
        let a = simulate_replicate(&cfg, 3);
        let _ = simulate_replicate(&cfg, 0);
        let b = simulate_replicate(&cfg, 3);
        assert_eq!(a, b);
        assert_ne!(a.data, simulate_replicate(&cfg, 4).data);
    }

    #[test]
    fn layer_variances() {
        let rep = simulate_replicate(&big(), 0);
        let (_, sd_x) = mean_sd(&rep.oracle.x_true);
        assert!((sd_x * sd_x / 6.0 - 1.0).abs() < 0.03);
        // unit-variance layers: x − r and w − r
        let xr: Vec<f64> = rep.oracle.x_true.iter().zip(&rep.oracle.r_true).map(|(x, r)| x - r).collect();
        assert!((mean_sd(&xr).1.powi(2) - 1.0).abs() < 0.03);
        let z: Vec<f64> = rep.data.z.rows.iter().map(|r| r[0].unwrap()).collect();
        let er: Vec<f64> = rep.oracle.r_true.iter().zip(&z).map(|(r, z)| r - 1.0 - 2.0 * z).collect();
        assert!((mean_sd(&er).1.powi(2) - 1.0).abs() < 0.03);
        let wr: Vec<f64> = rep
            .data
            .w
            .reps
            .iter()
            .zip(&rep.oracle.r_true)
            .filter_map(|(w, r)| w[0].map(|w| w - r))
            .collect();
        assert!((mean_sd(&wr).1.powi(2) - 1.0).abs() < 0.03);
        let Response::Gaussian { y, .. } = &rep.data.response else { unreachable!() };
        let ey: Vec<f64> = (0..y.len()).map(|i| y[i].unwrap() - 1.0 - 2.0 * rep.oracle.x_true[i] - 2.0 * z[i]).collect();
        assert!((mean_sd(&ey).1.powi(2) - 1.0).abs() < 0.03);
    }

    #[test]
    fn w_variance_without_missingness() {
        let cfg = SimConfig { miss_intercept: -1e3, ..big() };
        let w = observed_w(&simulate_replicate(&cfg, 0));
        assert_eq!(w.len(), cfg.n);
        let (_, sd) = mean_sd(&w);
        assert!((sd * sd / 6.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn missing_fraction_matches_rule() {
        let rep = simulate_replicate(&big(), 1);
        let missing = rep.data.w.reps.iter().filter(|r| r[0].is_none()).count() as f64 / 1e5;
        // E[logistic(−1.5 + 0.5 z)] for z ~ N(0, 1), by quadrature
        let expect: f64 = (-4000..=4000)
            .map(|k| {
                let z = k as f64 * 0.002;
                0.002 * missing_prob(z) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum();
        assert!((missing - expect).abs() < 0.005, "{missing} vs {expect}");
    }

    #[test]
    fn naive_limit_defaults() {
        assert_eq!(naive_limit(&SimConfig::default()), [2.0, 1.0, 4.0]);
    }

    #[test]
    fn exponential_identity_at_unit_shape() {
        let beta = [0.2, 0.5, -0.3, 0.4];
        let d = simulate_weibull(100_000, 1.0, beta, 0.0, 5).unwrap();
        let Response::Survival { time, event } = &d.response else { unreachable!() };
        assert!(event.iter().all(|e| *e));
        let scaled: Vec<f64> = (0..d.n())
            .map(|i| {
                let eta = beta[0]
                    + beta[1] * d.w.reps[i][0].unwrap()
                    + beta[2] * d.z.rows[i][0].unwrap()
                    + beta[3] * d.z.rows[i][1].unwrap();
                time[i].unwrap() * eta.exp()
            })
            .collect();
        let (m, _) = mean_sd(&scaled);
        assert!((m - 1.0).abs() < 0.03, "{m}");
    }

    #[test]
    fn censoring_is_calibrated() {
        let d = simulate_weibull(5000, 1.5, [0.0, 0.5, 0.3, -0.4], 0.3, 8).unwrap();
        let Response::Survival { event, .. } = &d.response else { unreachable!() };
        let frac = event.iter().filter(|e| !**e).count() as f64 / 5000.0;
        assert!((frac - 0.3).abs() < 0.002, "{frac}");
    }

    #[test]
    fn measurement_error_variant_has_replicates() {
        let cfg = WeibullSimConfig { n: 20, me_precision: Some(4.0), w_replicates: 2, ..Default::default() };
        let d = simulate_weibull_with(&cfg, 0).unwrap();
        assert_eq!(d.w.replicates(), 2);
        assert!(simulate_weibull(10, 0.0, [0.0; 4], 0.0, 1).is_err());
        assert!(simulate_weibull(10, 1.0, [0.0; 4], 1.0, 1).is_err());
    }
}
