//! Observed data: response, error-prone measurement replicates and the two
//! error-free covariate matrices. Missing cells are `None`; no numeric
//! sentinels are used anywhere.

use serde::{Deserialize, Serialize};

/// Response column(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Gaussian { name: String, y: Vec<Option<f64>> },
    /// Right-censored survival times; `event[i]` is false for a censoring.
    /// A missing time drops the observation from the likelihood.
    Survival { time: Vec<Option<f64>>, event: Vec<bool> },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Gaussian { y, .. } => y.len(),
            Response::Survival { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inclusion mask: observations that contribute to the likelihood.
    pub fn observed(&self) -> Vec<bool> {
        match self {
            Response::Gaussian { y, .. } => y.iter().map(Option::is_some).collect(),
            Response::Survival { time, .. } => time.iter().map(Option::is_some).collect(),
        }
    }
}

/// Named columns of covariates, stored row-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Covariates {
    pub fn new(names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Self {
        Self { names, rows }
    }

    /// Fully observed columns given column-wise.
    pub fn from_columns(names: &[&str], columns: &[Vec<f64>]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let rows = (0..n).map(|i| columns.iter().map(|c| Some(c[i])).collect()).collect();
        Self { names: names.iter().map(|s| s.to_string()).collect(), rows }
    }

    /// Zero columns for `n` observations.
    pub fn empty(n: usize) -> Self {
        Self { names: Vec::new(), rows: vec![Vec::new(); n] }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().flatten().any(Option::is_none)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, keep: &[usize]) -> Self {
        Self { names: self.names.clone(), rows: keep.iter().map(|&i| self.rows[i].clone()).collect() }
    }
}

/// Replicate measurements of the error-prone covariate (`n × m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub name: String,
    pub reps: Vec<Vec<Option<f64>>>,
}

impl Measurements {
    /// Single replicate.
    pub fn single(name: &str, w: Vec<Option<f64>>) -> Self {
        Self { name: name.to_string(), reps: w.into_iter().map(|v| vec![v]).collect() }
    }

    pub fn nrows(&self) -> usize {
        self.reps.len()
    }

    pub fn replicates(&self) -> usize {
        self.reps.first().map_or(0, Vec::len)
    }

    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        self.reps.iter().map(|r| r.iter().map(Option::is_none).collect()).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.reps.iter().flatten().any(Option::is_none)
    }

    /// Mean of the observed replicates in row `i`, if any.
    pub fn row_mean(&self, i: usize) -> Option<f64> {
        let obs: Vec<f64> = self.reps[i].iter().flatten().copied().collect();
        (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
    }

    /// Mean over all observed cells.
    pub fn overall_mean(&self) -> Option<f64> {
        let obs: Vec<f64> = self.reps.iter().flatten().flatten().copied().collect();
        (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub response: Response,
    pub w: Measurements,
    /// Error-free covariates of the regression model.
    pub z: Covariates,
    /// Error-free covariates of the imputation model.
    pub z_tilde: Covariates,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.response.len()
    }

    /// Rows whose first replicate of `w` is observed, in original order.
    pub fn complete_case_rows(&self) -> Vec<usize> {
        (0..self.w.nrows()).filter(|&i| self.w.reps[i].first().copied().flatten().is_some()).collect()
    }

    /// Subset of rows (response, measurements and both covariate blocks).
    pub fn select(&self, keep: &[usize]) -> Self {
        let response = match &self.response {
            Response::Gaussian { name, y } => {
                Response::Gaussian { name: name.clone(), y: keep.iter().map(|&i| y[i]).collect() }
            }
            Response::Survival { time, event } => Response::Survival {
                time: keep.iter().map(|&i| time[i]).collect(),
                event: keep.iter().map(|&i| event[i]).collect(),
            },
        };
        Dataset {
            response,
            w: Measurements { name: self.w.name.clone(), reps: keep.iter().map(|&i| self.w.reps[i].clone()).collect() },
            z: self.z.select(keep),
            z_tilde: self.z_tilde.select(keep),
        }
    }

    /// Drops rows with a missing first replicate and keeps only that
    /// replicate: the naive complete-case view of the data.
    pub fn complete_case(&self) -> Self {
        let mut out = self.select(&self.complete_case_rows());
        for row in &mut out.w.reps {
            row.truncate(1);
        }
        out
    }
}
