//! Simulation of the mixture-intensity Poisson point process, stochastic
//! Taylor expansion realizations and Monte Carlo envelopes.
//!
//! Realization `i` of any Monte Carlo routine draws from stream
//! `base.stream_id + i`, so results do not depend on how the work is split
//! across threads; all reductions run over the index-ordered set.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, SteError};
use crate::fmt_num;
use crate::model::{check_above, ComponentParams, EvalPoint, GeneralIntensity};
use crate::rng::RngStream;

const PIVOT_TOL: f64 = 1e-12;
const SAMPLEABLE_SLACK: f64 = 1e-12;

/// One event `(a, n_1..n_d)` of a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub a: f64,
    pub n: Vec<f64>,
}

/// A finite realization of the point process. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    pub d: usize,
    pub events: Vec<Event>,
}

impl PointPattern {
    pub fn new(d: usize, events: Vec<Event>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.n.len() != d) {
            return Err(SteError::Dimension { expected: d, got: e.n.len() });
        }
        Ok(PointPattern { d, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Whether the structured covariance of `comp` is positive semidefinite,
/// i.e. `sum_r rho_r^2 <= 1` (the Schur complement of the power block).
pub fn is_sampleable(comp: &ComponentParams) -> bool {
    comp.sigma_a >= 0.0 && comp.sigma_n.iter().all(|&s| s >= 0.0) && comp.rho_sq_sum() <= 1.0 + SAMPLEABLE_SLACK
}

/// Lower-triangular factor `L` with `L L^T = cov` for a symmetric positive
/// semidefinite row-major `n x n` matrix. Pivots at or below the tolerance
/// (relative to the largest diagonal entry) zero their column, so
/// degenerate directions sample as point masses.
pub fn psd_cholesky(cov: &[f64], n: usize) -> Vec<f64> {
    let scale = (0..n).map(|i| cov[i * n + i]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = cov[j * n + j];
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if pivot <= PIVOT_TOL * scale {
            continue;
        }
        let root = pivot.sqrt();
        l[j * n + j] = root;
        for i in (j + 1)..n {
            let mut s = cov[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / root;
        }
    }
    l
}

/// Precomputed per-component factors for repeated sampling.
struct Sampler {
    d: usize,
    lambda: f64,
    cumulative: Vec<f64>,
    means: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
}

impl Sampler {
    fn new(g: &GeneralIntensity) -> Result<Self> {
        for (index, c) in g.components().iter().enumerate() {
            if !is_sampleable(c) {
                return Err(SteError::NotSampleable { index, rho_sq_sum: c.rho_sq_sum() });
            }
        }
        let mut acc = 0.0;
        let cumulative = g
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let d = g.d();
        Ok(Sampler {
            d,
            lambda: g.lambda(),
            cumulative,
            means: g.components().iter().map(ComponentParams::mean).collect(),
            factors: g.components().iter().map(|c| psd_cholesky(&c.covariance(), d + 1)).collect(),
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> PointPattern {
        let count = Poisson::new(self.lambda).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let n = self.d + 1;
        let last = self.cumulative.len() - 1;
        let mut z = vec![0.0; n];
        let events = (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * self.cumulative[last];
                let m = self.cumulative.iter().position(|&c| u < c).unwrap_or(last);
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let (mean, l) = (&self.means[m], &self.factors[m]);
                let mut s = mean.clone();
                for i in 0..n {
                    for k in 0..=i {
                        s[i] += l[i * n + k] * z[k];
                    }
                }
                Event { a: s[0], n: s[1..].to_vec() }
            })
            .collect();
        PointPattern { d: self.d, events }
    }
}

/// Draws one realization: an event count `v ~ Poisson(lambda)`, then `v`
/// i.i.d. events from the normalized mixture.
pub fn sample_pattern(g: &GeneralIntensity, rng: RngStream) -> Result<PointPattern> {
    Ok(Sampler::new(g)?.sample(&mut rng.rng()))
}

/// `n` realizations, realization `i` drawn from stream `base + i`.
pub fn sample_patterns(g: &GeneralIntensity, n: usize, base: RngStream) -> Result<Vec<PointPattern>> {
    let sampler = Sampler::new(g)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| sampler.sample(&mut base.offset(i as u64).rng()))
        .collect())
}

/// The stochastic Taylor expansion `sum_{(a, n)} a prod_r (x_r - x0_r)^n_r`
/// of one realization.
pub fn ste_realization(pattern: &PointPattern, x: &[f64], x0: &[f64]) -> Result<f64> {
    check_above(x, x0)?;
    if pattern.d != x0.len() {
        return Err(SteError::Dimension { expected: x0.len(), got: pattern.d });
    }
    let deltas: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut sum = 0.0;
    for e in &pattern.events {
        let mut t = e.a;
        for (dl, n) in deltas.iter().zip(&e.n) {
            t *= dl.powf(*n);
        }
        sum += t;
    }
    if sum.is_finite() {
        return Ok(sum);
    }
    scaled_realization(pattern, &deltas)
}

/// Log-magnitude fallback for realizations that overflow when summed
/// directly.
fn scaled_realization(pattern: &PointPattern, deltas: &[f64]) -> Result<f64> {
    let logs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let terms: Vec<(f64, f64)> = pattern
        .events
        .iter()
        .filter(|e| e.a != 0.0)
        .map(|e| (e.a.signum(), e.a.abs().ln() + e.n.iter().zip(&logs).map(|(n, l)| n * l).sum::<f64>()))
        .collect();
    let Some(max) = terms.iter().map(|t| t.1).reduce(f64::max) else {
        return Ok(0.0);
    };
    let s: f64 = terms.iter().map(|(sg, l)| sg * (l - max).exp()).sum();
    if s == 0.0 {
        return Ok(0.0);
    }
    let log_mag = s.abs().ln() + max;
    if log_mag >= f64::MAX.ln() {
        return Err(SteError::NumericRange { log_magnitude: log_mag });
    }
    Ok(s.signum() * log_mag.exp())
}

/// Monte Carlo estimate of the estimator's expectation at `x` with its
/// standard error.
pub fn mc_mean(g: &GeneralIntensity, x: &[f64], n_real: usize, rng: RngStream) -> Result<(f64, f64)> {
    if n_real < 2 {
        return Err(SteError::InvalidParams("n_real must be >= 2".into()));
    }
    check_above(x, g.x0())?;
    let sampler = Sampler::new(g)?;
    let values = (0..n_real)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample(&mut rng.offset(i as u64).rng());
            ste_realization(&p, x, g.x0())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_stderr(&values))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Nearest-rank (type 1) empirical quantile of sorted data.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 - 1e-9).ceil() as isize;
    sorted[(rank - 1).clamp(0, n as isize - 1) as usize]
}

/// Pointwise `alpha/2` and `1 - alpha/2` quantiles of STE realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub grid: Vec<EvalPoint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: Vec<f64>,
    pub alpha: f64,
    pub n_real: usize,
}

impl Envelope {
    /// Maps the grid and the values back to original units.
    pub fn rescaled(&self, input_scale: &[f64], output_scale: f64) -> Envelope {
        let grid = self
            .grid
            .iter()
            .map(|p| EvalPoint(p.iter().zip(input_scale).map(|(v, c)| v * c).collect()))
            .collect();
        let scale = |v: &Vec<f64>| v.iter().map(|x| x * output_scale).collect();
        Envelope {
            grid,
            lower: scale(&self.lower),
            upper: scale(&self.upper),
            mean: scale(&self.mean),
            alpha: self.alpha,
            n_real: self.n_real,
        }
    }

    /// CSV with columns `x_1..x_d,lower,mean,upper`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.grid.first().map_or(0, |p| p.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=d).map(|r| format!("x_{r}")).collect();
        header.extend(["lower", "mean", "upper"].map(String::from));
        out.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid[i].iter().map(|&v| fmt_num(v)).collect();
            row.push(fmt_num(self.lower[i]));
            row.push(fmt_num(self.mean[i]));
            row.push(fmt_num(self.upper[i]));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Functional envelope: each realization is evaluated across the whole grid.
pub fn envelope(
    g: &GeneralIntensity,
    grid: &[EvalPoint],
    n_real: usize,
    alpha: f64,
    rng: RngStream,
) -> Result<Envelope> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SteError::InvalidParams(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_real == 0 {
        return Err(SteError::InvalidParams("n_real must be positive".into()));
    }
    for (i, p) in grid.iter().enumerate() {
        p.check_above(g.x0()).map_err(|e| e.at_row(i + 1))?;
    }
    let patterns = sample_patterns(g, n_real, rng)?;
    let columns = grid
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut vals = patterns
                .iter()
                .map(|pat| ste_realization(pat, p, g.x0()))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.at_row(i + 1))?;
            let mean = vals.iter().sum::<f64>() / n_real as f64;
            vals.sort_by(f64::total_cmp);
            Ok((nearest_rank(&vals, alpha / 2.0), mean, nearest_rank(&vals, 1.0 - alpha / 2.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Envelope {
        grid: grid.to_vec(),
        lower: columns.iter().map(|c| c.0).collect(),
        mean: columns.iter().map(|c| c.1).collect(),
        upper: columns.iter().map(|c| c.2).collect(),
        alpha,
        n_real,
    })
}
