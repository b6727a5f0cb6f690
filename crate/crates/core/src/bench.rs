//! Benchmark harness: a registry of test functions, synthetic data
//! generation and repeated fit/evaluate experiments with median summaries.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteError};
use crate::eval::predict_grid;
use crate::fit::{select_model, Dataset, FitConfig};
use crate::fmt_num;
use crate::metrics::{integrated_sq_distance, l1_distance, GridSpec};
use crate::rng::{derive_seed, RngStream};

/// A known regression function with the settings it is benchmarked under.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub id: &'static str,
    pub d: usize,
    pub eval: fn(&[f64]) -> f64,
    pub x0: &'static [f64],
    pub sigma: f64,
    pub m_max: usize,
    pub k_list: &'static [usize],
    pub fit_window: (&'static [f64], &'static [f64]),
    pub eval_window: (&'static [f64], &'static [f64]),
}

fn identity(x: &[f64]) -> f64 {
    x[0]
}

fn cubic(x: &[f64]) -> f64 {
    x[0].powi(3) - 6.0 * x[0]
}

fn trig_mix(x: &[f64]) -> f64 {
    let x = x[0];
    x * x.sin() + (-x * x).exp() + x * x.cos() / (x * x + 1.0)
}

fn exp2d(x: &[f64]) -> f64 {
    (-x[0] * x[0] + x[1]).exp()
}

fn poly2d(x: &[f64]) -> f64 {
    let (x, y) = (x[0], x[1]);
    x.powi(3) * y - y * y * x.exp() + 3.0 * x * y
}

pub const TEST_FUNCTIONS: &[TestFunction] = &[
    TestFunction {
        id: "identity",
        d: 1,
        eval: identity,
        x0: &[0.0],
        sigma: 1e-5,
        m_max: 15,
        k_list: &[500],
        fit_window: (&[0.0], &[5.0]),
        eval_window: (&[0.0], &[7.0]),
    },
    TestFunction {
        id: "cubic",
        d: 1,
        eval: cubic,
        x0: &[0.0],
        sigma: 1.0,
        m_max: 5,
        k_list: &[25, 100, 500],
        fit_window: (&[0.0], &[3.0]),
        eval_window: (&[0.0], &[4.0]),
    },
    TestFunction {
        id: "trig-mix",
        d: 1,
        eval: trig_mix,
        x0: &[0.0],
        sigma: 0.2,
        m_max: 6,
        k_list: &[25, 100, 500],
        fit_window: (&[0.0], &[3.0]),
        eval_window: (&[0.0], &[4.0]),
    },
    TestFunction {
        id: "exp2d",
        d: 2,
        eval: exp2d,
        x0: &[-0.05, -0.05],
        sigma: 0.5,
        m_max: 6,
        k_list: &[500],
        fit_window: (&[0.0, 0.0], &[1.0, 1.0]),
        eval_window: (&[0.0, 0.0], &[1.2, 1.2]),
    },
    TestFunction {
        id: "poly2d",
        d: 2,
        eval: poly2d,
        x0: &[-0.1, -0.1],
        sigma: 0.05,
        m_max: 8,
        k_list: &[500],
        fit_window: (&[0.0, 0.0], &[1.0, 1.0]),
        eval_window: (&[0.0, 0.0], &[1.2, 1.2]),
    },
];

pub fn test_function(id: &str) -> Result<&'static TestFunction> {
    TEST_FUNCTIONS
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| SteError::InvalidParams(format!("unknown test function '{id}'")))
}

/// `K` inputs uniform on the window `(lower, upper]`, sorted
/// lexicographically, with responses `f(x) + N(0, sigma^2)`.
pub fn make_dataset(
    f: &TestFunction,
    lower: &[f64],
    upper: &[f64],
    k: usize,
    sigma: f64,
    rng: RngStream,
) -> Result<Dataset> {
    if k == 0 || !(sigma >= 0.0) || lower.len() != f.d || upper.len() != f.d {
        return Err(SteError::InvalidParams("make_dataset needs K >= 1, sigma >= 0 and a d-dimensional window".into()));
    }
    let mut rng = rng.rng();
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| {
                    let u: f64 = rng.random();
                    hi - (hi - lo) * u
                })
                .collect()
        })
        .collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));
    let y = rows
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            (f.eval)(x) + sigma * z
        })
        .collect();
    Dataset::new(rows, y)
}

fn default_n_seeds() -> usize {
    5
}

fn default_starts() -> usize {
    FitConfig::default().n_starts
}

fn default_max_iters() -> usize {
    FitConfig::default().max_iters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub function: String,
    pub k: usize,
    pub sigma: f64,
    pub m_max: usize,
    pub fit_lower: Vec<f64>,
    pub fit_upper: Vec<f64>,
    pub eval_lower: Vec<f64>,
    pub eval_upper: Vec<f64>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Expansion origin; `None` falls back to the fit's offset rule.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Evaluation grid resolution; `None` uses the metric defaults.
    #[serde(default)]
    pub points_per_dim: Option<usize>,
}

impl ExperimentSpec {
    /// The registry settings for `id` at sample size `k`.
    pub fn for_function(id: &str, k: usize) -> Result<Self> {
        let f = test_function(id)?;
        Ok(ExperimentSpec {
            function: id.to_string(),
            k,
            sigma: f.sigma,
            m_max: f.m_max,
            fit_lower: f.fit_window.0.to_vec(),
            fit_upper: f.fit_window.1.to_vec(),
            eval_lower: f.eval_window.0.to_vec(),
            eval_upper: f.eval_window.1.to_vec(),
            n_seeds: default_n_seeds(),
            seed: 0,
            x0: Some(f.x0.to_vec()),
            n_starts: default_starts(),
            max_iters: default_max_iters(),
            points_per_dim: None,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = test_function(&self.function)?;
        for v in [&self.fit_lower, &self.fit_upper, &self.eval_lower, &self.eval_upper] {
            if v.len() != f.d {
                return Err(SteError::Dimension { expected: f.d, got: v.len() });
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != f.d {
                return Err(SteError::Dimension { expected: f.d, got: x0.len() });
            }
        }
        let inside = (0..f.d).all(|r| {
            self.eval_lower[r] <= self.fit_lower[r]
                && self.fit_lower[r] < self.fit_upper[r]
                && self.fit_upper[r] <= self.eval_upper[r]
        });
        if !inside {
            return Err(SteError::InvalidParams("evaluation window must contain the fit window".into()));
        }
        if self.k == 0 || self.n_seeds == 0 || self.m_max == 0 || self.n_starts == 0 || !(self.sigma >= 0.0) {
            return Err(SteError::InvalidParams("k, n_seeds, m_max and n_starts must be positive, sigma >= 0".into()));
        }
        Ok(())
    }

    fn grid(&self, x0: &[f64]) -> Result<GridSpec> {
        let g = match self.points_per_dim {
            Some(n) => GridSpec::new(self.eval_lower.clone(), self.eval_upper.clone(), n)?,
            None => GridSpec::with_default_points(self.eval_lower.clone(), self.eval_upper.clone())?,
        };
        g.shifted_above(x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed_index: usize,
    pub chosen_m: Option<usize>,
    pub rss: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub d_sq: Option<f64>,
    pub d_l1: Option<f64>,
    /// Seconds; machine dependent, so only written on request.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub chosen_m: f64,
    pub rss: f64,
    pub sigma2_hat: f64,
    pub d_sq: f64,
    pub d_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub seeds: Vec<SeedResult>,
    pub median: Medians,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_seed(spec: &ExperimentSpec, f: &TestFunction, s: usize) -> Result<SeedResult> {
    let start = Instant::now();
    let data = make_dataset(f, &spec.fit_lower, &spec.fit_upper, spec.k, spec.sigma, RngStream::new(spec.seed, s as u64))?;
    let cfg = FitConfig {
        n_starts: spec.n_starts,
        max_iters: spec.max_iters,
        seed: derive_seed(spec.seed, s as u64),
        x0: spec.x0.clone(),
        ..FitConfig::default()
    };
    let sel = select_model(&data, spec.m_max, &cfg)?;
    let grid = spec.grid(sel.chosen.model.x0())?;
    let pts = grid.points();
    let f_hat = predict_grid(&sel.chosen.model, &pts)?;
    let f_true: Vec<f64> = pts.iter().map(|p| (f.eval)(p)).collect();
    Ok(SeedResult {
        seed_index: s,
        chosen_m: Some(sel.chosen_m),
        rss: Some(sel.chosen.rss),
        sigma2_hat: Some(sel.chosen.sigma2),
        d_sq: Some(integrated_sq_distance(&f_hat, &f_true, &grid)?),
        d_l1: Some(l1_distance(&f_hat, &f_true, &grid)?),
        wall_time: Some(start.elapsed().as_secs_f64()),
        error: None,
    })
}

/// Fits every seed of `spec` and summarizes. A failing seed is recorded
/// with its error; the run fails only if every seed does.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let f = test_function(&spec.function)?;
    let results: Vec<Result<SeedResult>> = (0..spec.n_seeds).into_par_iter().map(|s| run_seed(spec, f, s)).collect();
    let mut last_err = None;
    let seeds: Vec<SeedResult> = results
        .into_iter()
        .enumerate()
        .map(|(s, r)| {
            r.unwrap_or_else(|e| {
                let msg = e.to_string();
                last_err = Some(e);
                SeedResult {
                    seed_index: s,
                    chosen_m: None,
                    rss: None,
                    sigma2_hat: None,
                    d_sq: None,
                    d_l1: None,
                    wall_time: None,
                    error: Some(msg),
                }
            })
        })
        .collect();
    let ok: Vec<&SeedResult> = seeds.iter().filter(|s| s.error.is_none()).collect();
    if ok.is_empty() {
        return Err(last_err.expect("at least one seed"));
    }
    let col = |g: fn(&SeedResult) -> Option<f64>| median(&ok.iter().filter_map(|s| g(s)).collect::<Vec<_>>());
    let median = Medians {
        chosen_m: col(|s| s.chosen_m.map(|m| m as f64)),
        rss: col(|s| s.rss),
        sigma2_hat: col(|s| s.sigma2_hat),
        d_sq: col(|s| s.d_sq),
        d_l1: col(|s| s.d_l1),
        wall_time: Some(col(|s| s.wall_time)),
    };
    Ok(ExperimentReport { spec: spec.clone(), seeds, median })
}

impl ExperimentReport {
    /// Drops wall-clock timings so the report depends on the spec alone.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.seeds.iter_mut().for_each(|s| s.wall_time = None);
        r.median.wall_time = None;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per seed and a final `median` row. The wall time column is
    /// present only if the report carries timings.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let timed = self.median.wall_time.is_some();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["seed", "chosen_m", "rss", "sigma2_hat", "d_sq", "d_l1"];
        if timed {
            header.push("wall_time");
        }
        header.push("error");
        out.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        for s in &self.seeds {
            let mut rec = vec![
                s.seed_index.to_string(),
                s.chosen_m.map(|m| m.to_string()).unwrap_or_default(),
                opt(s.rss),
                opt(s.sigma2_hat),
                opt(s.d_sq),
                opt(s.d_l1),
            ];
            if timed {
                rec.push(opt(s.wall_time));
            }
            rec.push(s.error.clone().unwrap_or_default());
            out.write_record(&rec)?;
        }
        let m = &self.median;
        let mut rec = vec![
            "median".to_string(),
            fmt_num(m.chosen_m),
            fmt_num(m.rss),
            fmt_num(m.sigma2_hat),
            fmt_num(m.d_sq),
            fmt_num(m.d_l1),
        ];
        if timed {
            rec.push(opt(m.wall_time));
        }
        rec.push(String::new());
        out.write_record(&rec)?;
        out.flush()?;
        Ok(())
    }
}
