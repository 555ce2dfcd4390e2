//! Response log-likelihoods in terms of the linear predictor.
//!
//! Gaussian: `½ (log τ − log 2π − τ (y − η)²)` per observation.
//! Weibull with `λ = exp(η)` and hazard `κ t^(κ−1) λ^κ`:
//! events contribute `log κ + (κ − 1) log t + κ η − (t e^η)^κ`, censorings
//! `−(t e^η)^κ`. Observations outside the inclusion mask contribute nothing.

use std::f64::consts::PI;

use crate::data::{Dataset, Response};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian { tau_y: f64 },
    Weibull { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    Gaussian(Vec<f64>),
    Survival { time: Vec<f64>, log_time: Vec<f64>, event: Vec<bool> },
}

/// Response model bound to its data.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseLik {
    family: Family,
    values: Values,
    include: Vec<bool>,
}

impl ResponseLik {
    /// Binds a family to the dataset's response; missing responses are
    /// excluded from the likelihood.
    pub fn new(family: Family, data: &Dataset) -> Result<Self> {
        check_family(family)?;
        let include = data.response.observed();
        let values = match (&data.response, family) {
            (Response::Gaussian { y, .. }, Family::Gaussian { .. }) => {
                Values::Gaussian(y.iter().map(|v| v.unwrap_or(0.0)).collect())
            }
            (Response::Survival { time, event }, Family::Weibull { .. }) => {
                let mut times = Vec::with_capacity(time.len());
                for t in time {
                    match t {
                        Some(t) if *t > 0.0 && t.is_finite() => times.push(*t),
                        Some(t) => {
                            return Err(Error::InvalidArgument(format!("survival time must be positive, got {t}")))
                        }
                        None => times.push(1.0),
                    }
                }
                let log_time = times.iter().map(|t| t.ln()).collect();
                Values::Survival { time: times, log_time, event: event.clone() }
            }
            _ => return Err(Error::InvalidArgument("response type does not match the likelihood family".into())),
        };
        Ok(Self { family, values, include })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.include.len()
    }

    pub fn is_empty(&self) -> bool {
        self.include.is_empty()
    }

    pub fn include(&self) -> &[bool] {
        &self.include
    }

    pub fn set_included(&mut self, i: usize, included: bool) {
        self.include[i] = included;
    }

    pub fn set_tau_y(&mut self, tau: f64) -> Result<()> {
        check_family(Family::Gaussian { tau_y: tau })?;
        if let Family::Gaussian { tau_y } = &mut self.family {
            *tau_y = tau;
        }
        Ok(())
    }

    pub fn set_kappa(&mut self, k: f64) -> Result<()> {
        check_family(Family::Weibull { kappa: k })?;
        if let Family::Weibull { kappa } = &mut self.family {
            *kappa = k;
        }
        Ok(())
    }

    /// Contribution of observation `i` at linear predictor `eta`, ignoring
    /// the inclusion mask.
    pub fn term(&self, i: usize, eta: f64) -> f64 {
        match (&self.values, self.family) {
            (Values::Gaussian(y), Family::Gaussian { tau_y }) => {
                0.5 * (tau_y.ln() - (2.0 * PI).ln() - tau_y * (y[i] - eta).powi(2))
            }
            (Values::Survival { time, log_time, event }, Family::Weibull { kappa }) => {
                let cum = cumulative_hazard(time[i], eta, kappa);
                if event[i] {
                    kappa.ln() + (kappa - 1.0) * log_time[i] + kappa * eta - cum
                } else {
                    -cum
                }
            }
            _ => unreachable!("family and values are bound together"),
        }
    }

    /// `(d/dη, −d²/dη²)` of observation `i`.
    pub fn term_derivatives(&self, i: usize, eta: f64) -> (f64, f64) {
        match (&self.values, self.family) {
            (Values::Gaussian(y), Family::Gaussian { tau_y }) => (tau_y * (y[i] - eta), tau_y),
            (Values::Survival { time, event, .. }, Family::Weibull { kappa }) => {
                let cum = cumulative_hazard(time[i], eta, kappa);
                let delta = if event[i] { 1.0 } else { 0.0 };
                (delta * kappa - kappa * cum, kappa * kappa * cum)
            }
            _ => unreachable!("family and values are bound together"),
        }
    }

    pub fn loglik(&self, eta: &[f64]) -> Result<f64> {
        self.check_len(eta)?;
        Ok(self.include.iter().zip(eta).enumerate().filter(|(_, (inc, _))| **inc).map(|(i, (_, &e))| self.term(i, e)).sum())
    }

    /// Per-observation gradient and negative curvature; zero where excluded.
    pub fn grad_hess_eta(&self, eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(eta)?;
        let mut grad = vec![0.0; eta.len()];
        let mut curv = vec![0.0; eta.len()];
        for (i, &e) in eta.iter().enumerate() {
            if self.include[i] {
                let (g, c) = self.term_derivatives(i, e);
                grad[i] = g;
                curv[i] = c;
            }
        }
        Ok((grad, curv))
    }

    fn check_len(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.include.len() {
            return Err(Error::DimensionMismatch { expected: self.include.len(), found: eta.len() });
        }
        Ok(())
    }
}

/// `(t e^η)^κ`, written so that `κ = 1` gives exactly `t e^η`.
fn cumulative_hazard(t: f64, eta: f64, kappa: f64) -> f64 {
    t.powf(kappa) * (kappa * eta).exp()
}

fn check_family(family: Family) -> Result<()> {
    match family {
        Family::Gaussian { tau_y } if !(tau_y > 0.0 && tau_y.is_finite()) => {
            Err(Error::InvalidArgument(format!("tau_y must be positive, got {tau_y}")))
        }
        Family::Weibull { kappa } if !(kappa > 0.0 && kappa.is_finite()) => {
            Err(Error::InvalidArgument(format!("Weibull shape must be positive, got {kappa}")))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Measurements};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(y: Vec<f64>) -> Dataset {
        let n = y.len();
        Dataset {
            response: Response::Gaussian { name: "y".into(), y: y.into_iter().map(Some).collect() },
            w: Measurements::single("w", vec![Some(0.0); n]),
            z: Covariates::empty(n),
            z_tilde: Covariates::empty(n),
        }
    }

    fn survival(t: Vec<f64>, d: Vec<bool>) -> Dataset {
        let n = t.len();
        Dataset {
            response: Response::Survival { time: t.into_iter().map(Some).collect(), event: d },
            w: Measurements::single("w", vec![Some(0.0); n]),
            z: Covariates::empty(n),
            z_tilde: Covariates::empty(n),
        }
    }

    #[test]
    fn gaussian_zero_residual() {
        let y = vec![1.0, -2.0, 0.5];
        let lik = ResponseLik::new(Family::Gaussian { tau_y: 1.0 }, &gaussian(y.clone())).unwrap();
        let expect = 3.0 * 0.5 * -(2.0 * PI).ln();
        assert!((lik.loglik(&y).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn weibull_shape_one_is_exponential() {
        let t = vec![0.3, 1.7, 2.2];
        let eta = vec![0.1, -0.4, 0.9];
        let lik = ResponseLik::new(Family::Weibull { kappa: 1.0 }, &survival(t.clone(), vec![true; 3])).unwrap();
        let expo: f64 = t.iter().zip(&eta).map(|(t, e): (&f64, &f64)| e - t * e.exp()).sum();
        assert_eq!(lik.loglik(&eta).unwrap(), expo);
    }

    #[test]
    fn weibull_point_value() {
        let lik = ResponseLik::new(Family::Weibull { kappa: 2.0 }, &survival(vec![1.0], vec![true])).unwrap();
        assert!((lik.loglik(&[0.0]).unwrap() - (2f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_derivatives() {
        let lik = ResponseLik::new(Family::Gaussian { tau_y: 2.0 }, &gaussian(vec![1.0, 3.0])).unwrap();
        let (g, c) = lik.grad_hess_eta(&[0.5, 4.0]).unwrap();
        assert_eq!(g, vec![1.0, -2.0]);
        assert_eq!(c, vec![2.0, 2.0]);
    }

    #[test]
    fn weibull_unit_derivatives() {
        let lik = ResponseLik::new(Family::Weibull { kappa: 1.0 }, &survival(vec![1.0], vec![true])).unwrap();
        let (g, c) = lik.grad_hess_eta(&[0.0]).unwrap();
        assert_eq!(g, vec![0.0]);
        assert_eq!(c, vec![1.0]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(ResponseLik::new(Family::Weibull { kappa: 0.0 }, &survival(vec![1.0], vec![true])).is_err());
        assert!(ResponseLik::new(Family::Weibull { kappa: 1.0 }, &survival(vec![0.0], vec![true])).is_err());
        assert!(ResponseLik::new(Family::Weibull { kappa: 1.0 }, &gaussian(vec![1.0])).is_err());
    }

    #[test]
    fn excluded_observation_contributes_nothing() {
        let mut lik = ResponseLik::new(Family::Weibull { kappa: 1.5 }, &survival(vec![0.5, 2.0], vec![true, false])).unwrap();
        let eta = [0.3, -0.2];
        let full = lik.loglik(&eta).unwrap();
        let single = lik.term(1, eta[1]);
        lik.set_included(1, false);
        assert!((full - lik.loglik(&eta).unwrap() - single).abs() < 1e-15);
        let (g, c) = lik.grad_hess_eta(&eta).unwrap();
        assert_eq!((g[1], c[1]), (0.0, 0.0));
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for draw in 0..100 {
            let n = 5;
            let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let lik = if draw % 2 == 0 {
                let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                ResponseLik::new(Family::Gaussian { tau_y: rng.random_range(0.2..3.0) }, &gaussian(y)).unwrap()
            } else {
                let t = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
                let d = (0..n).map(|_| rng.random_bool(0.7)).collect();
                ResponseLik::new(Family::Weibull { kappa: rng.random_range(0.5..3.0) }, &survival(t, d)).unwrap()
            };
            let (g, _) = lik.grad_hess_eta(&eta).unwrap();
            for i in 0..n {
                let fd = (lik.term(i, eta[i] + h) - lik.term(i, eta[i] - h)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "draw {draw} obs {i}: {fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn weibull_curvature_is_positive(
            kappa in 0.1f64..5.0, t in 0.01f64..20.0, eta in -5.0f64..5.0, event in any::<bool>()
        ) {
            let lik = ResponseLik::new(Family::Weibull { kappa }, &survival(vec![t], vec![event])).unwrap();
            let (_, c) = lik.grad_hess_eta(&[eta]).unwrap();
            prop_assert!(c[0] > 0.0);
        }
    }
}
