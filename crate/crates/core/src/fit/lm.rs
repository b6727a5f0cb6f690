//! A small Levenberg-Marquardt solver with Marquardt diagonal scaling and
//! Nielsen's damping update.

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem `min_p sum_k r_k(p)^2`.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Fills `r`; returns false if any residual is non-finite.
    fn residuals(&self, p: &[f64], r: &mut [f64]) -> bool;

    /// Fills `r` and the Jacobian of the residuals, `jac[(k, j)] = d r_k / d p_j`.
    fn residuals_and_jacobian(&self, p: &[f64], r: &mut [f64], jac: &mut DMatrix<f64>) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Stop once an accepted step improves the sum of squares by less than
    /// this fraction.
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub ssq: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_DAMPING: f64 = 1e32;

/// Runs LM from `start`. Returns `None` if the starting point itself has a
/// non-finite objective.
pub fn minimize<P: LeastSquares>(problem: &P, start: &[f64], cfg: LmConfig) -> Option<LmOutcome> {
    let n = problem.n_params();
    let k = problem.n_residuals();
    let mut p = start.to_vec();
    let mut r = vec![0.0; k];
    let mut r_trial = vec![0.0; k];
    let mut jac = DMatrix::<f64>::zeros(k, n);
    if !problem.residuals_and_jacobian(&p, &mut r, &mut jac) {
        return None;
    }
    let mut ssq = sum_sq(&r);
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut trial = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        // The plain product goes through the blocked gemm kernel, which is
        // several times faster than `tr_mul` here.
        let h = jac.transpose() * &jac;
        // Gradient of the half sum of squares is J^T r; the step solves
        // (H + mu D) delta = -J^T r.
        let g = jac.tr_mul(&rv);
        if g.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let max_diag = (0..n).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
        let diag: Vec<f64> = (0..n).map(|i| h[(i, i)].max(1e-12 * max_diag).max(1e-300)).collect();
        if mu < 0.0 {
            mu = 1e-3;
        }
        let mut accepted = false;
        while mu < MAX_DAMPING {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += mu * diag[i];
            }
            let Some(chol) = a.cholesky() else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            for i in 0..n {
                trial[i] = p[i] + delta[i];
            }
            let ok = problem.residuals(&trial, &mut r_trial);
            let trial_ssq = sum_sq(&r_trial);
            if ok && trial_ssq < ssq {
                // Predicted reduction of the linear model.
                let mut pred = 0.0;
                for i in 0..n {
                    pred += delta[i] * (mu * diag[i] * delta[i] - g[i]);
                }
                let gain = if pred > 0.0 { (ssq - trial_ssq) / pred } else { 1.0 };
                mu *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let improvement = (ssq - trial_ssq) / ssq.max(f64::MIN_POSITIVE);
                std::mem::swap(&mut p, &mut trial);
                if !problem.residuals_and_jacobian(&p, &mut r, &mut jac) {
                    // Residuals were finite a moment ago, so only the
                    // Jacobian can have failed; stop here.
                    ssq = trial_ssq;
                    return Some(LmOutcome { params: p, ssq, iterations, converged: false });
                }
                ssq = sum_sq(&r);
                accepted = true;
                if improvement < cfg.rel_tol {
                    converged = true;
                }
                break;
            }
            mu *= nu;
            nu *= 2.0;
        }
        if !accepted {
            // No descent at any damping: a stationary point to working precision.
            converged = true;
            break;
        }
        if converged || ssq == 0.0 {
            converged = true;
            break;
        }
    }
    Some(LmOutcome { params: p, ssq, iterations, converged })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}
