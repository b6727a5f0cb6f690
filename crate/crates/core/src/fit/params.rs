//! Unconstrained parameterization of an `M`-component model and the
//! analytic Jacobian of the estimator with respect to it.
//!
//! Each component occupies `3d + 2` consecutive slots:
//! `[mu_a, u_a, mu_n_1..mu_n_d, u_n_1..u_n_d, z_1..z_d]` with
//! `sigma = SIGMA_FLOOR + exp(u)` and `rho = z / sqrt(1 + |z|^2)`, so every
//! vector maps to a sampleable component (`sum rho^2 < 1`).

use nalgebra::DMatrix;

use crate::error::{Result, SteError};
use crate::fit::lm::LeastSquares;
use crate::fit::Dataset;
use crate::model::{ComponentParams, SteModel};

pub const SIGMA_FLOOR: f64 = 1e-8;

/// Slots per component.
pub fn stride(d: usize) -> usize {
    3 * d + 2
}

fn sigma_to_u(sigma: f64) -> f64 {
    (sigma - SIGMA_FLOOR).max(f64::MIN_POSITIVE).ln()
}

fn u_to_sigma(u: f64) -> f64 {
    SIGMA_FLOOR + u.exp()
}

/// Maps a correlation vector into `z` space; norms at or above one are
/// pulled just inside the unit ball first.
fn rho_to_z(rho: &[f64]) -> Vec<f64> {
    let norm_sq: f64 = rho.iter().map(|r| r * r).sum();
    let cap = 1.0 - 1e-12;
    let scale = if norm_sq >= cap { (cap / norm_sq).sqrt() } else { 1.0 };
    let norm_sq = norm_sq * scale * scale;
    let q = (1.0 - norm_sq).sqrt();
    rho.iter().map(|r| r * scale / q).collect()
}

pub fn z_to_rho(z: &[f64]) -> Vec<f64> {
    let q = (1.0 + z.iter().map(|v| v * v).sum::<f64>()).sqrt();
    z.iter().map(|v| v / q).collect()
}

pub fn pack_params(model: &SteModel) -> Vec<f64> {
    let d = model.d();
    let mut v = Vec::with_capacity(model.m() * stride(d));
    for c in model.components() {
        v.push(c.mu_a);
        v.push(sigma_to_u(c.sigma_a));
        v.extend_from_slice(&c.mu_n);
        v.extend(c.sigma_n.iter().map(|&s| sigma_to_u(s)));
        v.extend(rho_to_z(&c.rho));
    }
    v
}

pub fn unpack_params(v: &[f64], m: usize, d: usize, x0: &[f64]) -> Result<SteModel> {
    if v.len() != m * stride(d) {
        return Err(SteError::Dimension { expected: m * stride(d), got: v.len() });
    }
    if x0.len() != d {
        return Err(SteError::Dimension { expected: d, got: x0.len() });
    }
    let comps = v.chunks(stride(d)).map(|c| unpack_component(c, d)).collect::<Result<Vec<_>>>()?;
    SteModel::new(comps, x0.to_vec())
}

fn unpack_component(c: &[f64], d: usize) -> Result<ComponentParams> {
    ComponentParams::new(
        c[0],
        u_to_sigma(c[1]),
        c[2..2 + d].to_vec(),
        c[2 + d..2 + 2 * d].iter().map(|&u| u_to_sigma(u)).collect(),
        z_to_rho(&c[2 + 2 * d..2 + 3 * d]),
    )
}

/// The least-squares problem `r_k = y_k - f(x_k)` over packed parameters.
pub struct SteProblem<'a> {
    data: &'a Dataset,
    m: usize,
    d: usize,
    /// `ln(x_kr - x0_r)`, row-major.
    logs: Vec<f64>,
}

impl<'a> SteProblem<'a> {
    pub fn new(data: &'a Dataset, m: usize, x0: &[f64]) -> Result<Self> {
        data.check_above(x0)?;
        let d = data.d();
        let logs = (0..data.len())
            .flat_map(|k| data.row(k).iter().zip(x0).map(|(x, o)| (x - o).ln()).collect::<Vec<_>>())
            .collect();
        Ok(SteProblem { data, m, d, logs })
    }

    pub fn logs(&self, k: usize) -> &[f64] {
        &self.logs[k * self.d..(k + 1) * self.d]
    }

    /// Fitted values at every data row.
    pub fn predictions(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d;
        out.iter_mut().for_each(|o| *o = 0.0);
        for c in v.chunks(stride(d)) {
            let sa = u_to_sigma(c[1]);
            let mu_n = &c[2..2 + d];
            let s: Vec<f64> = c[2 + d..2 + 2 * d].iter().map(|&u| u_to_sigma(u)).collect();
            let rho = z_to_rho(&c[2 + 2 * d..]);
            for (k, o) in out.iter_mut().enumerate() {
                let l = self.logs(k);
                let mut e = 0.0;
                let mut b = 0.0;
                for r in 0..d {
                    e += mu_n[r] * l[r] + 0.5 * s[r] * s[r] * l[r] * l[r];
                    b += rho[r] * s[r] * l[r];
                }
                *o += (c[0] + sa * b) * e.exp();
            }
        }
    }

    /// Sum of squared residuals, `None` if non-finite.
    pub fn ssq(&self, v: &[f64]) -> Option<f64> {
        let mut r = vec![0.0; self.data.len()];
        self.residuals(v, &mut r).then(|| r.iter().map(|x| x * x).sum())
    }

    /// Gradient of the sum of squared residuals with respect to `v`.
    pub fn ssq_gradient(&self, v: &[f64]) -> Option<Vec<f64>> {
        let k = self.data.len();
        let mut r = vec![0.0; k];
        let mut jac = DMatrix::zeros(k, v.len());
        if !self.residuals_and_jacobian(v, &mut r, &mut jac) {
            return None;
        }
        Some((0..v.len()).map(|j| 2.0 * (0..k).map(|i| jac[(i, j)] * r[i]).sum::<f64>()).collect())
    }
}

impl LeastSquares for SteProblem<'_> {
    fn n_params(&self) -> usize {
        self.m * stride(self.d)
    }

    fn n_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, v: &[f64], r: &mut [f64]) -> bool {
        self.predictions(v, r);
        for (k, ri) in r.iter_mut().enumerate() {
            *ri = self.data.y()[k] - *ri;
        }
        r.iter().all(|x| x.is_finite())
    }

    fn residuals_and_jacobian(&self, v: &[f64], r: &mut [f64], jac: &mut DMatrix<f64>) -> bool {
        let d = self.d;
        let st = stride(d);
        r.iter_mut().for_each(|o| *o = 0.0);
        let mut s = vec![0.0; d];
        let mut ds = vec![0.0; d];
        for (mi, c) in v.chunks(st).enumerate() {
            let base = mi * st;
            let mu_a = c[0];
            let sa = u_to_sigma(c[1]);
            let dsa = sa - SIGMA_FLOOR;
            let mu_n = &c[2..2 + d];
            for q in 0..d {
                s[q] = u_to_sigma(c[2 + d + q]);
                ds[q] = s[q] - SIGMA_FLOOR;
            }
            let z = &c[2 + 2 * d..];
            let qn = (1.0 + z.iter().map(|x| x * x).sum::<f64>()).sqrt();
            let rho: Vec<f64> = z.iter().map(|x| x / qn).collect();
            for k in 0..self.data.len() {
                let l = self.logs(k);
                let mut e = 0.0;
                let mut b = 0.0;
                let mut zsl = 0.0;
                for q in 0..d {
                    e += mu_n[q] * l[q] + 0.5 * s[q] * s[q] * l[q] * l[q];
                    b += rho[q] * s[q] * l[q];
                    zsl += z[q] * s[q] * l[q];
                }
                let p = e.exp();
                let a = mu_a + sa * b;
                r[k] += a * p;
                // Residual derivatives are the negated model derivatives.
                jac[(k, base)] = -p;
                jac[(k, base + 1)] = -b * p * dsa;
                for q in 0..d {
                    jac[(k, base + 2 + q)] = -a * p * l[q];
                    jac[(k, base + 2 + d + q)] = -(sa * rho[q] * l[q] + a * s[q] * l[q] * l[q]) * p * ds[q];
                    jac[(k, base + 2 + 2 * d + q)] =
                        -sa * p * (s[q] * l[q] / qn - z[q] * zsl / (qn * qn * qn));
                }
            }
        }
        for (k, ri) in r.iter_mut().enumerate() {
            *ri = self.data.y()[k] - *ri;
        }
        r.iter().all(|x| x.is_finite()) && jac.iter().all(|x| x.is_finite())
    }
}
