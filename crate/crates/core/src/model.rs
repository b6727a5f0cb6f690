//! Parameter types for the mixture-intensity point process and the fitted
//! estimator, plus the versioned JSON document the model serializes to.

use std::cmp::Ordering;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SteError};

/// Current model document version.
pub const MODEL_VERSION: u32 = 1;

/// Parameters of one mixture component: a normal law over the coefficient
/// `a` and the `d` powers `n_1..n_d`, with the structured covariance in
/// which the powers are mutually independent and each is correlated with
/// `a` through `rho[r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub mu_a: f64,
    pub sigma_a: f64,
    pub mu_n: Vec<f64>,
    pub sigma_n: Vec<f64>,
    pub rho: Vec<f64>,
}

impl ComponentParams {
    pub fn new(mu_a: f64, sigma_a: f64, mu_n: Vec<f64>, sigma_n: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        let c = ComponentParams { mu_a, sigma_a, mu_n, sigma_n, rho };
        c.validate()?;
        Ok(c)
    }

    /// A one-dimensional component.
    pub fn univariate(mu_a: f64, sigma_a: f64, mu_n: f64, sigma_n: f64, rho: f64) -> Result<Self> {
        Self::new(mu_a, sigma_a, vec![mu_n], vec![sigma_n], vec![rho])
    }

    /// Component with zero spread: contributes exactly `a * prod (x_r - x0_r)^n_r`.
    pub fn degenerate(a: f64, powers: Vec<f64>) -> Result<Self> {
        let d = powers.len();
        Self::new(a, 0.0, powers, vec![0.0; d], vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.mu_n.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu_n.len();
        if d == 0 {
            return Err(SteError::InvalidParams("component has dimension 0".into()));
        }
        if self.sigma_n.len() != d || self.rho.len() != d {
            return Err(SteError::InvalidParams(format!(
                "mu_n, sigma_n and rho lengths differ ({}, {}, {})",
                d,
                self.sigma_n.len(),
                self.rho.len()
            )));
        }
        let all_finite = self.mu_a.is_finite()
            && self.sigma_a.is_finite()
            && self.mu_n.iter().chain(&self.sigma_n).chain(&self.rho).all(|v| v.is_finite());
        if !all_finite {
            return Err(SteError::InvalidParams("non-finite component parameter".into()));
        }
        if self.sigma_a < 0.0 || self.sigma_n.iter().any(|&s| s < 0.0) {
            return Err(SteError::InvalidParams("standard deviations must be >= 0".into()));
        }
        // Closed interval: evaluation accepts |rho| = 1.
        if self.rho.iter().any(|r| r.abs() > 1.0) {
            return Err(SteError::InvalidParams("correlations must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn rho_sq_sum(&self) -> f64 {
        self.rho.iter().map(|r| r * r).sum()
    }

    /// Mean vector `(mu_a, mu_n_1, .., mu_n_d)`.
    pub fn mean(&self) -> Vec<f64> {
        std::iter::once(self.mu_a).chain(self.mu_n.iter().copied()).collect()
    }

    /// Row-major `(d+1) x (d+1)` covariance: `a` first, then the powers.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let n = d + 1;
        let mut cov = vec![0.0; n * n];
        cov[0] = self.sigma_a * self.sigma_a;
        for r in 0..d {
            let c = self.rho[r] * self.sigma_a * self.sigma_n[r];
            cov[r + 1] = c;
            cov[(r + 1) * n] = c;
            cov[(r + 1) * n + r + 1] = self.sigma_n[r] * self.sigma_n[r];
        }
        cov
    }
}

/// Canonical component order: increasing `mu_a`, ties broken by
/// lexicographic `mu_n`.
pub fn canonical_cmp(a: &ComponentParams, b: &ComponentParams) -> Ordering {
    a.mu_a.total_cmp(&b.mu_a).then_with(|| {
        a.mu_n
            .iter()
            .zip(&b.mu_n)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// The reduced estimator: equal weights with total rate equal to the number
/// of components, so the closed form is a plain sum over components.
#[derive(Debug, Clone, PartialEq)]
pub struct SteModel {
    d: usize,
    components: Vec<ComponentParams>,
    x0: Vec<f64>,
    sigma2: f64,
    rescale: Vec<f64>,
}

impl SteModel {
    /// Builds a model and puts its components in canonical order.
    pub fn new(mut components: Vec<ComponentParams>, x0: Vec<f64>) -> Result<Self> {
        let d = x0.len();
        if d == 0 {
            return Err(SteError::InvalidParams("origin has dimension 0".into()));
        }
        if components.is_empty() {
            return Err(SteError::InvalidParams("model needs at least one component".into()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(SteError::InvalidParams("non-finite origin".into()));
        }
        for c in &components {
            c.validate()?;
            if c.dim() != d {
                return Err(SteError::Dimension { expected: d, got: c.dim() });
            }
        }
        components.sort_by(canonical_cmp);
        Ok(SteModel { d, components, x0, sigma2: 0.0, rescale: vec![1.0; d + 1] })
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(SteError::InvalidParams(format!("sigma2 must be finite and >= 0, got {sigma2}")));
        }
        self.sigma2 = sigma2;
        Ok(self)
    }

    /// Scale divisors, inputs first and the response last.
    pub fn with_rescale(mut self, rescale: Vec<f64>) -> Result<Self> {
        if rescale.len() != self.d + 1 {
            return Err(SteError::Dimension { expected: self.d + 1, got: rescale.len() });
        }
        if rescale.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(SteError::InvalidParams("rescale factors must be finite and > 0".into()));
        }
        self.rescale = rescale;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.components
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rescale(&self) -> &[f64] {
        &self.rescale
    }

    /// Number of free parameters, `M (3d + 2)`.
    pub fn n_params(&self) -> usize {
        self.m() * (3 * self.d + 2)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            d: self.d,
            x0: self.x0.clone(),
            sigma2: self.sigma2,
            rescale: self.rescale.clone(),
            components: self.components.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(SteError::Serde(format!("unsupported model version {}", doc.version)));
        }
        if doc.x0.len() != doc.d {
            return Err(SteError::Dimension { expected: doc.d, got: doc.x0.len() });
        }
        SteModel::new(doc.components, doc.x0)?.with_sigma2(doc.sigma2)?.with_rescale(doc.rescale)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

/// On-disk form of [`SteModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub d: usize,
    pub x0: Vec<f64>,
    pub sigma2: f64,
    pub rescale: Vec<f64>,
    pub components: Vec<ComponentParams>,
}

/// The general mixture intensity `lambda * sum_m p_m g_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralIntensity {
    lambda: f64,
    weights: Vec<f64>,
    components: Vec<ComponentParams>,
    x0: Vec<f64>,
}

impl GeneralIntensity {
    pub fn new(lambda: f64, weights: Vec<f64>, components: Vec<ComponentParams>, x0: Vec<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SteError::InvalidParams(format!("lambda must be finite and > 0, got {lambda}")));
        }
        if weights.len() != components.len() || components.is_empty() {
            return Err(SteError::InvalidParams("need one weight per component and at least one component".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SteError::InvalidParams("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SteError::InvalidParams(format!("weights sum to {total}, not 1")));
        }
        let d = x0.len();
        for c in &components {
            c.validate()?;
            if c.dim() != d {
                return Err(SteError::Dimension { expected: d, got: c.dim() });
            }
        }
        Ok(GeneralIntensity { lambda, weights, components, x0 })
    }

    /// The reduction used by the fitted estimator: `lambda = M`, `p_m = 1/M`.
    pub fn from_model(model: &SteModel) -> Self {
        let m = model.m();
        GeneralIntensity {
            lambda: m as f64,
            weights: vec![1.0 / m as f64; m],
            components: model.components.clone(),
            x0: model.x0.clone(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.components
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn d(&self) -> usize {
        self.x0.len()
    }
}

/// A point at which an estimator is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint(pub Vec<f64>);

impl EvalPoint {
    /// Errors unless every coordinate is strictly above the origin.
    pub fn check_above(&self, x0: &[f64]) -> Result<()> {
        check_above(&self.0, x0)
    }
}

impl Deref for EvalPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for EvalPoint {
    fn from(v: Vec<f64>) -> Self {
        EvalPoint(v)
    }
}

impl From<f64> for EvalPoint {
    fn from(v: f64) -> Self {
        EvalPoint(vec![v])
    }
}

pub(crate) fn check_above(x: &[f64], x0: &[f64]) -> Result<()> {
    if x.len() != x0.len() {
        return Err(SteError::Dimension { expected: x0.len(), got: x.len() });
    }
    for (coord, (&v, &o)) in x.iter().zip(x0).enumerate() {
        // Also rejects NaN.
        if !(v > o) {
            return Err(SteError::Domain { coord, value: v, origin: o });
        }
    }
    Ok(())
}
