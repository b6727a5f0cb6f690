//! Integrated distances between an estimator and a reference function on a
//! rectangular window, by the composite trapezoid rule on a uniform tensor
//! grid.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SteError};
use crate::model::EvalPoint;

/// Default points for one-dimensional windows.
pub const DEFAULT_POINTS_1D: usize = 1000;
/// Default points per dimension for two (or more) dimensional windows.
pub const DEFAULT_POINTS_ND: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(SteError::Dimension { expected: lower.len(), got: upper.len() });
        }
        if points_per_dim < 2 {
            return Err(SteError::InvalidParams("need at least 2 points per dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(SteError::InvalidParams("grid bounds must satisfy lower < upper".into()));
        }
        Ok(GridSpec { lower, upper, points_per_dim })
    }

    /// Grid with the default resolution for its dimension.
    pub fn with_default_points(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = if lower.len() == 1 { DEFAULT_POINTS_1D } else { DEFAULT_POINTS_ND };
        Self::new(lower, upper, n)
    }

    pub fn d(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.d() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self, r: usize) -> f64 {
        (self.upper[r] - self.lower[r]) / (self.points_per_dim - 1) as f64
    }

    fn coord(&self, r: usize, i: usize) -> f64 {
        if i + 1 == self.points_per_dim {
            self.upper[r]
        } else {
            self.lower[r] + i as f64 * self.step(r)
        }
    }

    /// Moves every lower bound that is not strictly above the origin inward
    /// by one grid step, keeping the point count.
    pub fn shifted_above(&self, x0: &[f64]) -> Result<Self> {
        let mut lower = self.lower.clone();
        for r in 0..self.d() {
            if lower[r] <= x0[r] {
                lower[r] = x0[r] + self.step(r);
            }
        }
        GridSpec::new(lower, self.upper.clone(), self.points_per_dim)
    }

    /// All grid points, first coordinate varying slowest.
    pub fn points(&self) -> Vec<EvalPoint> {
        let d = self.d();
        let n = self.points_per_dim;
        (0..self.len())
            .map(|flat| {
                let mut rem = flat;
                let mut p = vec![0.0; d];
                for r in (0..d).rev() {
                    p[r] = self.coord(r, rem % n);
                    rem /= n;
                }
                EvalPoint(p)
            })
            .collect()
    }

    /// Trapezoid weights aligned with [`GridSpec::points`].
    pub fn weights(&self) -> Vec<f64> {
        let d = self.d();
        let n = self.points_per_dim;
        let w1: Vec<Vec<f64>> = (0..d)
            .map(|r| {
                let h = self.step(r);
                (0..n).map(|i| if i == 0 || i + 1 == n { h / 2.0 } else { h }).collect()
            })
            .collect();
        (0..self.len())
            .map(|flat| {
                let mut rem = flat;
                let mut w = 1.0;
                for r in (0..d).rev() {
                    w *= w1[r][rem % n];
                    rem /= n;
                }
                w
            })
            .collect()
    }
}

fn integrate(f_hat: &[f64], f_true: &[f64], grid: &GridSpec, g: impl Fn(f64) -> f64) -> Result<f64> {
    let n = grid.len();
    if f_hat.len() != n || f_true.len() != n {
        return Err(SteError::Dimension { expected: n, got: if f_hat.len() != n { f_hat.len() } else { f_true.len() } });
    }
    if f_hat.iter().chain(f_true).any(|v| !v.is_finite()) {
        return Err(SteError::Data("non-finite value in distance input".into()));
    }
    Ok(grid.weights().iter().zip(f_hat.iter().zip(f_true)).map(|(w, (a, b))| w * g(a - b)).sum())
}

/// `int_W (f_hat - f)^2 dx`.
pub fn integrated_sq_distance(f_hat: &[f64], f_true: &[f64], grid: &GridSpec) -> Result<f64> {
    integrate(f_hat, f_true, grid, |e| e * e)
}

/// `int_W |f_hat - f| dx`.
pub fn l1_distance(f_hat: &[f64], f_true: &[f64], grid: &GridSpec) -> Result<f64> {
    integrate(f_hat, f_true, grid, f64::abs)
}
