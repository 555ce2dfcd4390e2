//! Declarative model description: response family, active error layers,
//! priors and per-observation precision scalings, plus well-posedness checks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, Response};
use crate::error::{Error, Result};

/// Classical-error scaling for a cell observed without error.
pub const NO_ERROR_SCALE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    /// Identity link, Gaussian residuals with precision `tau_y`.
    GaussianLinear,
    /// Hazard `κ t^(κ-1) λ^κ` with `log λ = η`, right censoring.
    WeibullSurvival,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLayers {
    pub classical: bool,
    pub berkson: bool,
}

impl ErrorLayers {
    pub const NONE: Self = Self { classical: false, berkson: false };
    pub const CLASSICAL: Self = Self { classical: true, berkson: false };
    pub const BERKSON: Self = Self { classical: false, berkson: true };
    pub const BOTH: Self = Self { classical: true, berkson: true };

    pub fn any(&self) -> bool {
        self.classical || self.berkson
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: f64,
    pub precision: f64,
}

impl GaussianPrior {
    pub const fn new(mean: f64, precision: f64) -> Self {
        Self { mean, precision }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        0.5 * (self.precision / (2.0 * std::f64::consts::PI)).ln() - 0.5 * self.precision * (x - self.mean).powi(2)
    }
}

/// Prior on a positive parameter (precision or Weibull shape).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PositivePrior {
    /// Shape/rate parameterisation: mean `shape / rate`.
    Gamma { shape: f64, rate: f64 },
    /// Held at the value; never updated.
    Fixed(f64),
}

impl PositivePrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, PositivePrior::Fixed(_))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PositivePrior::Gamma { shape, rate } => shape / rate,
            PositivePrior::Fixed(v) => v,
        }
    }

    /// Log density at `x > 0` (zero for a fixed prior).
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PositivePrior::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            PositivePrior::Fixed(_) => 0.0,
        }
    }

    /// Log density of `log x`, including the Jacobian.
    pub fn log_density_log_scale(&self, log_x: f64) -> f64 {
        self.log_density(log_x.exp()) + log_x
    }

    fn valid(&self) -> bool {
        match *self {
            PositivePrior::Gamma { shape, rate } => shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite(),
            PositivePrior::Fixed(v) => v > 0.0 && v.is_finite(),
        }
    }
}

impl fmt::Display for PositivePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositivePrior::Gamma { shape, rate } => write!(f, "Gamma({shape}, {rate})"),
            PositivePrior::Fixed(v) => write!(f, "Fixed({v})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    /// Default for the regression coefficients `beta0`, `beta_<z>`, `beta_x`.
    pub beta: GaussianPrior,
    /// Default for the imputation coefficients `alpha0`, `alpha_<z>`.
    pub alpha: GaussianPrior,
    /// Per-coefficient overrides keyed by parameter name.
    pub overrides: BTreeMap<String, GaussianPrior>,
    pub tau_y: PositivePrior,
    pub tau_uc: PositivePrior,
    pub tau_ub: PositivePrior,
    pub tau_x: PositivePrior,
    pub kappa: PositivePrior,
}

impl Default for PriorSet {
    fn default() -> Self {
        Self {
            beta: GaussianPrior::new(0.0, 1e-6),
            alpha: GaussianPrior::new(0.0, 1e-6),
            overrides: BTreeMap::new(),
            tau_y: PositivePrior::Gamma { shape: 1.0, rate: 5e-5 },
            tau_uc: PositivePrior::Fixed(1.0),
            tau_ub: PositivePrior::Fixed(1.0),
            tau_x: PositivePrior::Gamma { shape: 1.0, rate: 5e-5 },
            kappa: PositivePrior::Gamma { shape: 1.0, rate: 0.01 },
        }
    }
}

impl PriorSet {
    /// Prior of a named coefficient; names starting with `alpha` use the
    /// imputation default.
    pub fn coefficient(&self, name: &str) -> GaussianPrior {
        if let Some(p) = self.overrides.get(name) {
            return *p;
        }
        if name.starts_with("alpha") {
            self.alpha
        } else {
            self.beta
        }
    }
}

/// Diagonal scalings of the three error precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorScaling {
    /// Classical-error scaling per cell of `w` (`n × m`); `None` marks a
    /// cell that is excluded from the classical-error likelihood.
    pub d_c: Vec<Vec<Option<f64>>>,
    pub d_b: Vec<f64>,
    pub d_x: Vec<f64>,
}

impl ErrorScaling {
    /// Unit scalings for every observed cell of `data.w`.
    pub fn unit(data: &Dataset) -> Self {
        let mask = data.w.missing_mask();
        let flags: Vec<Vec<bool>> = mask.iter().map(|r| vec![true; r.len()]).collect();
        build_error_scaling(&mask, &flags, 1.0).expect("unit base is valid")
    }

    pub fn nrows(&self) -> usize {
        self.d_c.len()
    }

    /// Cells that enter the classical-error likelihood.
    pub fn included_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.d_c
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, d)| d.map(|d| (i, j, d))))
    }
}

/// Builds classical-error scalings: `base` for cells flagged as carrying
/// measurement error, [`NO_ERROR_SCALE`] for cells observed exactly, and an
/// exclusion tag for missing cells. Berkson and imputation scalings are 1.
pub fn build_error_scaling(missing_mask: &[Vec<bool>], me_flags: &[Vec<bool>], base: f64) -> Result<ErrorScaling> {
    build_error_scaling_with(missing_mask, me_flags, base, NO_ERROR_SCALE)
}

pub fn build_error_scaling_with(
    missing_mask: &[Vec<bool>],
    me_flags: &[Vec<bool>],
    base: f64,
    no_error_scale: f64,
) -> Result<ErrorScaling> {
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::InvalidArgument(format!("scaling base must be positive, got {base}")));
    }
    if !(no_error_scale > 0.0 && no_error_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("no-error scale must be positive, got {no_error_scale}")));
    }
    if missing_mask.len() != me_flags.len() {
        return Err(Error::DimensionMismatch { expected: missing_mask.len(), found: me_flags.len() });
    }
    let mut d_c = Vec::with_capacity(missing_mask.len());
    for (miss, flags) in missing_mask.iter().zip(me_flags) {
        if miss.len() != flags.len() {
            return Err(Error::DimensionMismatch { expected: miss.len(), found: flags.len() });
        }
        d_c.push(
            miss.iter()
                .zip(flags)
                .map(|(&m, &me)| match (m, me) {
                    (true, _) => None,
                    (false, true) => Some(base),
                    (false, false) => Some(no_error_scale),
                })
                .collect(),
        );
    }
    let n = d_c.len();
    Ok(ErrorScaling { d_c, d_b: vec![1.0; n], d_x: vec![1.0; n] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    pub layers: ErrorLayers,
    /// Whether the imputation (exposure) model for the error-prone covariate
    /// is part of the model.
    pub imputation: bool,
    pub priors: PriorSet,
    /// `None` means unit scalings for every observed cell.
    pub scaling: Option<ErrorScaling>,
}

impl ModelSpec {
    /// Plain regression on the (fully observed) covariate.
    pub fn plain(likelihood: Likelihood) -> Self {
        Self { likelihood, layers: ErrorLayers::NONE, imputation: false, priors: PriorSet::default(), scaling: None }
    }

    pub fn with_layers(mut self, layers: ErrorLayers, imputation: bool) -> Self {
        self.layers = layers;
        self.imputation = imputation;
        self
    }

    pub fn with_priors(mut self, priors: PriorSet) -> Self {
        self.priors = priors;
        self
    }

    pub fn with_scaling(mut self, scaling: ErrorScaling) -> Self {
        self.scaling = Some(scaling);
        self
    }

    pub fn scaling_for(&self, data: &Dataset) -> ErrorScaling {
        self.scaling.clone().unwrap_or_else(|| ErrorScaling::unit(data))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DimensionMismatch { block: &'static str, expected: usize, found: usize },
    Empty,
    NoReplicates,
    MissingErrorFree { block: &'static str, row: usize },
    MissingNeedsClassical,
    ClassicalNeedsImputation,
    ReplicatesNeedClassical,
    ResponseFamily,
    NonPositiveTime { row: usize },
    InvalidPrior { name: String },
    InvalidScaling { what: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { block, expected, found } => {
                write!(f, "dimension mismatch in {block}: expected {expected}, found {found}")
            }
            Violation::Empty => write!(f, "dataset has no observations"),
            Violation::NoReplicates => write!(f, "error-prone covariate has no measurement column"),
            Violation::MissingErrorFree { block, row } => {
                write!(f, "error-free covariate has missing cell ({block}, row {row})")
            }
            Violation::MissingNeedsClassical => write!(f, "missing w requires Classical layer for imputation"),
            Violation::ClassicalNeedsImputation => write!(f, "Classical layer requires the imputation model"),
            Violation::ReplicatesNeedClassical => {
                write!(f, "repeated measurements require the Classical layer")
            }
            Violation::ResponseFamily => write!(f, "response column type does not match the likelihood"),
            Violation::NonPositiveTime { row } => write!(f, "survival time must be positive (row {row})"),
            Violation::InvalidPrior { name } => write!(f, "prior for {name} has nonpositive parameters"),
            Violation::InvalidScaling { what } => write!(f, "invalid error scaling: {what}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Validation(self.violations.iter().map(ToString::to_string).collect()))
        }
    }
}

/// Checks that `spec` is a well-posed model for `data`. Never fails; an
/// empty report means the model can be fitted.
pub fn validate(spec: &ModelSpec, data: &Dataset) -> ValidationReport {
    let mut v = Vec::new();
    let n = data.n();
    if n == 0 {
        v.push(Violation::Empty);
    }
    let mut dim = |block: &'static str, found: usize| {
        if found != n {
            v.push(Violation::DimensionMismatch { block, expected: n, found });
        }
    };
    dim("w", data.w.nrows());
    dim("Z", data.z.nrows());
    dim("Z_tilde", data.z_tilde.nrows());
    if let Response::Survival { event, .. } = &data.response {
        dim("event", event.len());
    }
    let m = data.w.replicates();
    if m == 0 && n > 0 {
        v.push(Violation::NoReplicates);
    }
    if let Some(row) = data.w.reps.iter().find(|r| r.len() != m) {
        v.push(Violation::DimensionMismatch { block: "w row", expected: m, found: row.len() });
    }
    for (block, cov) in [("Z", &data.z), ("Z_tilde", &data.z_tilde)] {
        if let Some(row) = cov.rows.iter().position(|r| r.len() != cov.ncols()) {
            v.push(Violation::DimensionMismatch { block, expected: cov.ncols(), found: cov.rows[row].len() });
        }
        if let Some(row) = cov.rows.iter().position(|r| r.iter().any(Option::is_none)) {
            v.push(Violation::MissingErrorFree { block, row });
        }
    }

    let layers = spec.layers;
    if data.w.has_missing() && !layers.classical {
        v.push(Violation::MissingNeedsClassical);
    }
    if layers.classical && !spec.imputation {
        v.push(Violation::ClassicalNeedsImputation);
    }
    if m > 1 && !layers.classical {
        v.push(Violation::ReplicatesNeedClassical);
    }

    match (&data.response, spec.likelihood) {
        (Response::Gaussian { .. }, Likelihood::GaussianLinear) => {}
        (Response::Survival { time, .. }, Likelihood::WeibullSurvival) => {
            if let Some(row) = time.iter().position(|t| matches!(t, Some(t) if !(*t > 0.0 && t.is_finite()))) {
                v.push(Violation::NonPositiveTime { row });
            }
        }
        _ => v.push(Violation::ResponseFamily),
    }

    let p = &spec.priors;
    let mut positive = vec![("tau_y", p.tau_y), ("tau_uc", p.tau_uc), ("tau_ub", p.tau_ub), ("tau_x", p.tau_x)];
    if spec.likelihood == Likelihood::WeibullSurvival {
        positive.push(("kappa", p.kappa));
    }
    for (name, prior) in positive {
        if !prior.valid() {
            v.push(Violation::InvalidPrior { name: name.to_string() });
        }
    }
    let gaussians = std::iter::once(("beta", &p.beta))
        .chain(std::iter::once(("alpha", &p.alpha)))
        .chain(p.overrides.iter().map(|(k, g)| (k.as_str(), g)));
    for (name, g) in gaussians {
        if !(g.precision > 0.0 && g.precision.is_finite() && g.mean.is_finite()) {
            v.push(Violation::InvalidPrior { name: name.to_string() });
        }
    }

    if let Some(s) = &spec.scaling {
        if s.d_c.len() != n || s.d_b.len() != n || s.d_x.len() != n {
            v.push(Violation::InvalidScaling { what: "length differs from the number of observations" });
        } else if s.d_c.iter().any(|r| r.len() != m) {
            v.push(Violation::InvalidScaling { what: "classical scaling does not match the replicate count" });
        }
        let ok = |d: f64| d > 0.0 && d.is_finite();
        if !s.d_c.iter().flatten().flatten().all(|&d| ok(d)) || !s.d_b.iter().chain(&s.d_x).all(|&d| ok(d)) {
            v.push(Violation::InvalidScaling { what: "entries must be positive and finite" });
        }
        let missing_included = s
            .d_c
            .iter()
            .zip(&data.w.reps)
            .any(|(ds, ws)| ds.iter().zip(ws).any(|(d, w)| d.is_some() && w.is_none()));
        if missing_included {
            v.push(Violation::InvalidScaling { what: "a missing cell is included in the classical likelihood" });
        }
    }

    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariates, Measurements};

    fn small(w: Vec<Option<f64>>, z_missing: bool) -> Dataset {
        let n = w.len();
        let mut z = Covariates::from_columns(&["z"], &[(0..n).map(|i| i as f64).collect()]);
        if z_missing {
            z.rows[1][0] = None;
        }
        Dataset {
            response: Response::Gaussian { name: "y".into(), y: (0..n).map(|i| Some(i as f64)).collect() },
            w: Measurements::single("w", w),
            z: z.clone(),
            z_tilde: z,
        }
    }

    #[test]
    fn well_formed_classical_model_passes() {
        let data = small(vec![Some(1.0), Some(2.0), None], false);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::CLASSICAL, true);
        assert!(validate(&spec, &data).is_ok());
    }

    #[test]
    fn missing_error_free_cell_is_reported() {
        let data = small(vec![Some(1.0), Some(2.0), Some(3.0)], true);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::CLASSICAL, true);
        let report = validate(&spec, &data);
        assert!(report
            .violations
            .iter()
            .any(|v| v.to_string().starts_with("error-free covariate has missing cell")));
    }

    #[test]
    fn berkson_only_with_missing_needs_classical() {
        let data = small(vec![Some(1.0), None, Some(3.0)], false);
        let spec = ModelSpec::plain(Likelihood::GaussianLinear).with_layers(ErrorLayers::BERKSON, true);
        let report = validate(&spec, &data);
        assert_eq!(report.violations, vec![Violation::MissingNeedsClassical]);
        assert_eq!(report.violations[0].to_string(), "missing w requires Classical layer for imputation");
    }

    #[test]
    fn nonpositive_gamma_is_reported() {
        let data = small(vec![Some(1.0), Some(2.0)], false);
        let mut spec = ModelSpec::plain(Likelihood::GaussianLinear);
        spec.priors.tau_y = PositivePrior::Gamma { shape: 0.0, rate: 1.0 };
        assert_eq!(validate(&spec, &data).violations, vec![Violation::InvalidPrior { name: "tau_y".into() }]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut data = small(vec![Some(1.0), Some(2.0), Some(3.0)], false);
        data.z_tilde.rows.pop();
        let spec = ModelSpec::plain(Likelihood::GaussianLinear);
        assert!(matches!(
            validate(&spec, &data).violations[..],
            [Violation::DimensionMismatch { block: "Z_tilde", expected: 3, found: 2 }]
        ));
    }

    #[test]
    fn scaling_without_error_is_no_error_scale() {
        let mask = vec![vec![false]; 4];
        let s = build_error_scaling(&mask, &vec![vec![false]; 4], 1.0).unwrap();
        assert!(s.d_c.iter().flatten().all(|d| *d == Some(1e12)));
        let s = build_error_scaling(&mask, &vec![vec![true]; 4], 1.0).unwrap();
        assert!(s.d_c.iter().flatten().all(|d| *d == Some(1.0)));
    }

    #[test]
    fn missing_cell_is_excluded_from_classical_likelihood() {
        let mask = vec![vec![false], vec![true], vec![false]];
        let s = build_error_scaling(&mask, &vec![vec![true]; 3], 2.0).unwrap();
        let cells: Vec<_> = s.included_cells().collect();
        assert_eq!(cells, vec![(0, 0, 2.0), (2, 0, 2.0)]);
    }

    #[test]
    fn nonpositive_base_is_rejected() {
        assert!(build_error_scaling(&[vec![false]], &[vec![true]], 0.0).is_err());
        assert!(build_error_scaling(&[vec![false]], &[vec![true]], -1.0).is_err());
    }

    #[test]
    fn gamma_log_density_matches_closed_form() {
        let p = PositivePrior::Gamma { shape: 2.0, rate: 3.0 };
        // 3^2 x e^{-3x} / Γ(2) at x = 0.5
        let expect = (9.0 * 0.5 * (-1.5f64).exp()).ln();
        assert!((p.log_density(0.5) - expect).abs() < 1e-12);
    }
}
