//! Dense closed-form reference posteriors used to check the engines.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Response};
use crate::error::{Error, Result};
use crate::spec::PriorSet;

/// Exact Gaussian posterior of the regression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugatePosterior {
    /// `beta0`, `beta_<z>`..., `beta_x`.
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ConjugatePosterior {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|n| n == name).map(|k| (self.mean[k], self.sd[k]))
    }
}

/// Posterior of a linear model with known residual precision `tau_y`,
/// covariates `(1, z, w)` all observed and independent Gaussian priors.
/// Rows with a missing response are dropped.
pub fn conjugate_linear(data: &Dataset, tau_y: f64, priors: &PriorSet) -> Result<ConjugatePosterior> {
    let Response::Gaussian { y, .. } = &data.response else {
        return Err(Error::InvalidArgument("conjugate oracle needs a Gaussian response".into()));
    };
    let mut names = vec!["beta0".to_string()];
    names.extend(data.z.names.iter().map(|n| format!("beta_{n}")));
    names.push("beta_x".to_string());
    let p = names.len();
    let mut q = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for (k, name) in names.iter().enumerate() {
        let g = priors.coefficient(name);
        q[(k, k)] += g.precision;
        b[k] += g.precision * g.mean;
    }
    for i in 0..data.n() {
        let Some(yi) = y[i] else { continue };
        let mut row = vec![1.0];
        for v in &data.z.rows[i] {
            row.push(v.ok_or_else(|| Error::InvalidArgument(format!("missing z in row {i}")))?);
        }
        row.push(data.w.reps[i][0].ok_or_else(|| Error::InvalidArgument(format!("missing w in row {i}")))?);
        let a = DVector::from_vec(row);
        q += &a * a.transpose() * tau_y;
        b += &a * (tau_y * yi);
    }
    let chol = q.cholesky().ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
    let mean = chol.solve(&b);
    let cov = chol.inverse();
    Ok(ConjugatePosterior {
        names,
        mean: mean.iter().copied().collect(),
        sd: (0..p).map(|k| cov[(k, k)].sqrt()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Measurements};
    use crate::spec::GaussianPrior;

    #[test]
    fn single_mean_with_strong_prior() {
        // w = 0 leaves beta_x at its prior
        let data = Dataset {
            response: Response::Gaussian { name: "y".into(), y: vec![Some(1.0), Some(3.0), None] },
            w: Measurements::single("w", vec![Some(0.0); 3]),
            z: Covariates::empty(3),
            z_tilde: Covariates::empty(3),
        };
        let priors = PriorSet { beta: GaussianPrior::new(0.0, 2.0), ..PriorSet::default() };
        let post = conjugate_linear(&data, 1.0, &priors).unwrap();
        // precision 2 + 2, canonical mean 4
        let (m, s) = post.get("beta0").unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert!((s - 0.5).abs() < 1e-12);
        let (m, s) = post.get("beta_x").unwrap();
        assert!(m.abs() < 1e-12 && (s - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
