//! Least-squares estimation of the estimator's parameters for a fixed number
//! of components, and selection of the number of components by residual sum
//! of squares.

pub mod lm;
pub mod params;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteError};
use crate::eval::evaluate;
use crate::model::{check_above, ModelDocument, SteModel};
use crate::rng::RngStream;

use lm::{minimize, LmConfig};
pub use params::{pack_params, unpack_params, SteProblem, SIGMA_FLOOR};

/// Paired inputs (`K x d`, row-major) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || d == 0 {
            return Err(SteError::Data("dataset needs at least one row and one input column".into()));
        }
        if rows.len() != y.len() {
            return Err(SteError::Dimension { expected: rows.len(), got: y.len() });
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(SteError::Dimension { expected: d, got: row.len() }.at_row(k + 1));
            }
            if row.iter().chain(std::iter::once(&y[k])).any(|v| !v.is_finite()) {
                return Err(SteError::Data("non-finite value".into()).at_row(k + 1));
            }
        }
        Ok(Dataset { d, x: rows.concat(), y })
    }

    /// A one-dimensional dataset.
    pub fn univariate(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(x.into_iter().map(|v| vec![v]).collect(), y)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks(self.d)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Rows `range` as a new dataset.
    pub fn subset(&self, idx: impl IntoIterator<Item = usize>) -> Result<Self> {
        let (rows, y): (Vec<Vec<f64>>, Vec<f64>) = idx.into_iter().map(|k| (self.row(k).to_vec(), self.y[k])).unzip();
        Dataset::new(rows, y)
    }

    pub fn check_above(&self, x0: &[f64]) -> Result<()> {
        for (k, row) in self.rows().enumerate() {
            check_above(row, x0).map_err(|e| e.at_row(k + 1))?;
        }
        Ok(())
    }

    pub fn column_min_max(&self, r: usize) -> (f64, f64) {
        self.rows().map(|row| row[r]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub delta_frac: f64,
    /// Selection window as a fraction of the total sum of squares.
    pub select_tol: f64,
    pub seed: u64,
    /// Explicit expansion origin; overrides the `delta_frac` rule.
    pub x0: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { n_starts: 20, max_iters: 500, rel_tol: 1e-10, delta_frac: 0.05, select_tol: 1e-3, seed: 0, x0: None }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.n_starts == 0 || self.max_iters == 0 {
            return Err(SteError::InvalidParams("n_starts and max_iters must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.delta_frac > 0.0 && self.select_tol >= 0.0) {
            return Err(SteError::InvalidParams("rel_tol and delta_frac must be > 0, select_tol >= 0".into()));
        }
        Ok(())
    }

    pub fn origin_for(&self, data: &Dataset) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(x0) => {
                if x0.len() != data.d() {
                    return Err(SteError::Dimension { expected: data.d(), got: x0.len() });
                }
                Ok(x0.clone())
            }
            None => choose_origin(data, self.delta_frac),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: SteModel,
    pub rss: f64,
    pub sigma2: f64,
    pub n_starts_converged: usize,
    pub best_start_index: usize,
    /// Fewer observations than free parameters.
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFit {
    /// Index `m - 1` holds the fit with `m` components, `None` if it failed.
    pub per_m: Vec<Option<FitResult>>,
    pub chosen_m: usize,
    pub chosen: FitResult,
}

/// One line of the per-M table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssRow {
    pub m: usize,
    pub rss: Option<f64>,
    pub sigma2: Option<f64>,
    pub n_starts_converged: usize,
    pub best_start_index: Option<usize>,
}

/// The model document extended with the selection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    #[serde(flatten)]
    pub model: ModelDocument,
    pub rss: f64,
    pub chosen_m: usize,
    pub rss_table: Vec<RssRow>,
}

impl SelectedFit {
    pub fn rss_table(&self) -> Vec<RssRow> {
        self.per_m
            .iter()
            .enumerate()
            .map(|(i, f)| RssRow {
                m: i + 1,
                rss: f.as_ref().map(|f| f.rss),
                sigma2: f.as_ref().map(|f| f.sigma2),
                n_starts_converged: f.as_ref().map_or(0, |f| f.n_starts_converged),
                best_start_index: f.as_ref().map(|f| f.best_start_index),
            })
            .collect()
    }

    pub fn to_document(&self) -> FitDocument {
        FitDocument {
            model: self.chosen.model.to_document(),
            rss: self.chosen.rss,
            chosen_m: self.chosen_m,
            rss_table: self.rss_table(),
        }
    }
}

/// Origin strictly below the data: `min_r - max(delta_frac * range_r, 1e-6)`.
pub fn choose_origin(data: &Dataset, delta_frac: f64) -> Result<Vec<f64>> {
    if !(delta_frac.is_finite() && delta_frac >= 0.0) {
        return Err(SteError::InvalidParams(format!("delta_frac must be finite and >= 0, got {delta_frac}")));
    }
    Ok((0..data.d())
        .map(|r| {
            let (lo, hi) = data.column_min_max(r);
            lo - (delta_frac * (hi - lo)).max(1e-6)
        })
        .collect())
}

/// `sum_k (y_k - f(x_k))^2`.
pub fn rss(model: &SteModel, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (k, row) in data.rows().enumerate() {
        let e = data.y()[k] - evaluate(model, row).map_err(|e| e.at_row(k + 1))?;
        total += e * e;
    }
    Ok(total)
}

/// `sum_k (y_k - mean y)^2`.
pub fn total_sum_of_squares(data: &Dataset) -> f64 {
    let mean = data.y().iter().sum::<f64>() / data.len() as f64;
    data.y().iter().map(|y| (y - mean) * (y - mean)).sum()
}

/// Maximum-likelihood noise variance `rss / K`.
pub fn sigma2_mle(rss: f64, k: usize) -> f64 {
    rss / k as f64
}

/// Graded monomial exponents in `d` variables: degree 0, then all of degree
/// 1, and so on, each degree in reverse lexicographic order.
fn graded_monomials(d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut degree = 0;
    while out.len() < count {
        let mut level = Vec::new();
        let mut cur = vec![0usize; d];
        compositions(degree, 0, &mut cur, &mut level);
        level.reverse();
        out.extend(level.into_iter().map(|v| v.into_iter().map(|e| e as f64).collect()));
        degree += 1;
    }
    out.truncate(count);
    out
}

fn compositions(rest: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == cur.len() {
        cur[pos] = rest;
        out.push(cur.clone());
        return;
    }
    for e in 0..=rest {
        cur[pos] = e;
        compositions(rest - e, pos + 1, cur, out);
    }
}

const INIT_SIGMA_A: f64 = 0.5;
const INIT_SIGMA_N: f64 = 0.1;

/// Starting vector for start `s`. Start 0 is the Taylor-like anchor with
/// powers `m - 1` in every coordinate; for `d > 1` start 1 uses graded
/// monomial powers instead. Later starts perturb one of the two anchors with
/// a spread growing in `s`. Coefficient means are always re-solved by
/// linear least squares given the other parameters.
fn initial_params(problem: &SteProblem, data: &Dataset, m: usize, s: usize, stream: RngStream) -> Vec<f64> {
    let d = data.d();
    let st = params::stride(d);
    let graded = d > 1 && s % 2 == 1;
    let powers: Vec<Vec<f64>> =
        if graded { graded_monomials(d, m) } else { (0..m).map(|j| vec![j as f64; d]).collect() };
    let mut v = vec![0.0; m * st];
    let mut rng = stream.rng();
    let spread = 0.4 * (s as f64).sqrt();
    let mut jitter = |scale: f64| -> f64 {
        if s == 0 {
            0.0
        } else {
            scale * rng.sample::<f64, _>(StandardNormal)
        }
    };
    for j in 0..m {
        let c = &mut v[j * st..(j + 1) * st];
        c[1] = (INIT_SIGMA_A - SIGMA_FLOOR).ln() + jitter(0.5 * spread);
        for r in 0..d {
            c[2 + r] = powers[j][r] + jitter(spread);
            c[2 + d + r] = (INIT_SIGMA_N - SIGMA_FLOOR).ln() + jitter(0.5 * spread);
            c[2 + 2 * d + r] = jitter(0.5 * spread);
        }
    }
    solve_coefficients(problem, data, &mut v, m, d);
    v
}

/// Sets each `mu_a` to the least-squares solution with everything else fixed
/// (the model is linear in the coefficient means).
fn solve_coefficients(problem: &SteProblem, data: &Dataset, v: &mut [f64], m: usize, d: usize) {
    let st = params::stride(d);
    let k = data.len();
    for j in 0..m {
        v[j * st] = 0.0;
    }
    // With all mu_a = 0 the predictions are the fixed part.
    let mut fixed = vec![0.0; k];
    problem.predictions(v, &mut fixed);
    let mut basis = DMatrix::<f64>::zeros(k, m);
    let mut single = vec![0.0; k];
    for j in 0..m {
        let mut unit = vec![0.0; st];
        unit.copy_from_slice(&v[j * st..(j + 1) * st]);
        unit[0] = 1.0;
        // sigma_a contributes through the correlation term; drop it here.
        unit[1] = f64::NEG_INFINITY;
        problem.predictions(&unit, &mut single);
        for i in 0..k {
            basis[(i, j)] = single[i];
        }
    }
    let rhs = DVector::from_iterator(k, (0..k).map(|i| data.y()[i] - fixed[i]));
    if !basis.iter().chain(rhs.iter()).all(|x| x.is_finite()) {
        return;
    }
    let svd = basis.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    if let Ok(sol) = svd.solve(&rhs, tol) {
        if sol.iter().all(|x| x.is_finite()) {
            for j in 0..m {
                v[j * st] = sol[j];
            }
        }
    }
}

/// Best of `cfg.n_starts` local least-squares fits with `m` components.
pub fn fit_fixed_m(data: &Dataset, m: usize, cfg: &FitConfig, x0: &[f64]) -> Result<FitResult> {
    cfg.validate()?;
    if m == 0 {
        return Err(SteError::InvalidParams("M must be positive".into()));
    }
    let d = data.d();
    let problem = SteProblem::new(data, m, x0)?;
    let lm_cfg = LmConfig { max_iters: cfg.max_iters, rel_tol: cfg.rel_tol };
    let outcomes: Vec<Option<(f64, SteModel, bool)>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| {
            let start = initial_params(&problem, data, m, s, RngStream::new(cfg.seed, s as u64));
            let out = minimize(&problem, &start, lm_cfg)?;
            let model = unpack_params(&out.params, m, d, x0).ok()?;
            let r = rss(&model, data).ok().filter(|r| r.is_finite())?;
            Some((r, model, out.converged))
        })
        .collect();
    let n_starts_converged = outcomes.iter().flatten().filter(|o| o.2).count();
    let (best_start_index, (best_rss, best_model, _)) = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|o| (i, o)))
        .reduce(|a, b| if b.1 .0 < a.1 .0 { b } else { a })
        .ok_or(SteError::FitFailed { m })?;
    let sigma2 = sigma2_mle(best_rss, data.len());
    Ok(FitResult {
        model: best_model.with_sigma2(sigma2)?,
        rss: best_rss,
        sigma2,
        n_starts_converged,
        best_start_index,
        underdetermined: data.len() < m * params::stride(d),
    })
}

/// Fits every `M = 1..=m_max` and picks the smallest `M` whose RSS is within
/// `select_tol * TSS` of the best, where `TSS = sum (y - mean y)^2`.
///
/// A window relative to the minimum RSS itself would track the noise level:
/// with nearly exact data every extra component that absorbs a little noise
/// would clear it. Measuring against the total variation keeps the rule
/// invariant to the noise scale.
pub fn select_model(data: &Dataset, m_max: usize, cfg: &FitConfig) -> Result<SelectedFit> {
    cfg.validate()?;
    if m_max == 0 {
        return Err(SteError::InvalidParams("M_max must be positive".into()));
    }
    let x0 = cfg.origin_for(data)?;
    data.check_above(&x0)?;
    let mut per_m = Vec::with_capacity(m_max);
    let mut last_err = None;
    for m in 1..=m_max {
        match fit_fixed_m(data, m, cfg, &x0) {
            Ok(f) => per_m.push(Some(f)),
            Err(e) => {
                last_err = Some(e);
                per_m.push(None);
            }
        }
    }
    let min_rss = per_m.iter().flatten().map(|f| f.rss).reduce(f64::min);
    let Some(min_rss) = min_rss else {
        return Err(last_err.unwrap_or(SteError::FitFailed { m: 1 }));
    };
    let window = min_rss + cfg.select_tol * total_sum_of_squares(data);
    let chosen_m = per_m
        .iter()
        .position(|f| f.as_ref().is_some_and(|f| f.rss <= window))
        .map(|i| i + 1)
        .expect("the minimum is always within the window");
    let chosen = per_m[chosen_m - 1].clone().expect("chosen fit exists");
    Ok(SelectedFit { per_m, chosen_m, chosen })
}
