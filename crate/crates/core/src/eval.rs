//! Closed-form evaluation of the Taylor-expansion Poisson point process
//! estimator.
//!
//! Each component contributes
//!
//! ```text
//! (mu_a + sum_r rho_r sigma_a sigma_nr ln d_r) * prod_r d_r^(mu_nr + sigma_nr^2 / 2 * ln d_r)
//! ```
//!
//! with `d_r = x_r - x0_r > 0`. Components are summed in canonical order.
//! When a term could overflow, the sum is carried in log-magnitude and sign
//! form and an explicit range error is returned if the total cannot be
//! represented.

use crate::error::{Result, SteError};
use crate::model::{check_above, ComponentParams, EvalPoint, GeneralIntensity, SteModel};

/// Above this log-magnitude a term is summed in scaled form.
const DIRECT_LOG_LIMIT: f64 = 700.0;

/// `E[delta^n]` for `n ~ N(mu, sigma^2)`: `delta^(mu + sigma^2 / 2 * ln delta)`.
pub fn power_moment(delta: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_offset(delta)?;
    let l = delta.ln();
    Ok(delta.powf(mu + sigma * sigma / 2.0 * l))
}

/// `E[(n - mu) delta^n]` for `n ~ N(mu, sigma^2)`:
/// `sigma^2 ln delta * delta^(mu + sigma^2 / 2 * ln delta)`.
pub fn centered_power_moment(delta: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_offset(delta)?;
    let l = delta.ln();
    Ok(sigma * sigma * l * delta.powf(mu + sigma * sigma / 2.0 * l))
}

fn check_offset(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(SteError::NonPositiveOffset(delta))
    }
}

/// One summand split into a coefficient and a power part.
struct Term {
    coef: f64,
    /// `ln` of the power product.
    log_pow: f64,
    /// The power product, `None` when it may not be representable.
    pow: Option<f64>,
}

fn term(comp: &ComponentParams, deltas: &[f64], logs: &[f64]) -> Term {
    let mut coef = comp.mu_a;
    for r in 0..deltas.len() {
        coef += comp.rho[r] * comp.sigma_a * comp.sigma_n[r] * logs[r];
    }
    let mut log_pow = 0.0;
    let mut pow = 1.0;
    for r in 0..deltas.len() {
        let e = comp.mu_n[r] + comp.sigma_n[r] * comp.sigma_n[r] / 2.0 * logs[r];
        log_pow += e * logs[r];
        pow *= deltas[r].powf(e);
    }
    let pow = if log_pow.abs() <= DIRECT_LOG_LIMIT { Some(pow) } else { None };
    Term { coef, log_pow, pow }
}

/// Sums `weight * coef * pow` over terms, falling back to a scaled sum when
/// any term is outside the direct range.
fn weighted_sum(terms: impl Iterator<Item = (f64, Term)>) -> Result<f64> {
    let terms: Vec<(f64, Term)> = terms.collect();
    let direct = terms.iter().all(|(w, t)| {
        t.pow.is_some() && (t.coef == 0.0 || *w == 0.0 || (t.log_pow + (w * t.coef).abs().ln()) <= DIRECT_LOG_LIMIT)
    });
    if direct {
        let mut acc = 0.0;
        for (w, t) in &terms {
            acc += w * (t.coef * t.pow.unwrap_or(0.0));
        }
        return Ok(acc);
    }
    // Scaled path: every term as sign * exp(log_mag), normalized by the max.
    let mags: Vec<(f64, f64)> = terms
        .iter()
        .filter(|(w, t)| *w != 0.0 && t.coef != 0.0)
        .map(|(w, t)| ((w * t.coef).signum(), (w * t.coef).abs().ln() + t.log_pow))
        .collect();
    let Some(max) = mags.iter().map(|(_, l)| *l).filter(|l| l.is_finite()).reduce(f64::max) else {
        return Ok(0.0);
    };
    let scaled: f64 = mags.iter().map(|(s, l)| s * (l - max).exp()).sum();
    if scaled == 0.0 {
        return Ok(0.0);
    }
    let log_mag = scaled.abs().ln() + max;
    if log_mag >= f64::MAX.ln() {
        return Err(SteError::NumericRange { log_magnitude: log_mag });
    }
    Ok(scaled.signum() * log_mag.exp())
}

fn offsets(x: &[f64], x0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_above(x, x0)?;
    let deltas: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    if let Some(coord) = deltas.iter().position(|d| !(*d > 0.0)) {
        // x > x0 but the difference rounds to zero.
        return Err(SteError::Domain { coord, value: x[coord], origin: x0[coord] });
    }
    let logs = deltas.iter().map(|d| d.ln()).collect();
    Ok((deltas, logs))
}

/// The contribution of a single component at `x`.
pub fn eval_component(comp: &ComponentParams, x: &[f64], x0: &[f64]) -> Result<f64> {
    if comp.dim() != x0.len() {
        return Err(SteError::Dimension { expected: x0.len(), got: comp.dim() });
    }
    let (deltas, logs) = offsets(x, x0)?;
    weighted_sum(std::iter::once((1.0, term(comp, &deltas, &logs))))
}

/// The reduced estimator: sum of component contributions.
pub fn evaluate(model: &SteModel, x: &[f64]) -> Result<f64> {
    let (deltas, logs) = offsets(x, model.x0())?;
    weighted_sum(model.components().iter().map(|c| (1.0, term(c, &deltas, &logs))))
}

/// The general estimator `lambda * sum_m p_m * component_m`.
pub fn evaluate_general(g: &GeneralIntensity, x: &[f64]) -> Result<f64> {
    let (deltas, logs) = offsets(x, g.x0())?;
    let lambda = g.lambda();
    weighted_sum(
        g.components()
            .iter()
            .zip(g.weights())
            .map(|(c, p)| (lambda * p, term(c, &deltas, &logs))),
    )
}

/// A Taylor polynomial `sum_m a_m (x - x0)^m` as a degenerate model.
pub fn from_taylor_polynomial(coeffs: &[f64], x0: f64) -> Result<SteModel> {
    if coeffs.is_empty() {
        return Err(SteError::InvalidParams("at least one coefficient required".into()));
    }
    let comps = coeffs
        .iter()
        .enumerate()
        .map(|(m, &a)| ComponentParams::degenerate(a, vec![m as f64]))
        .collect::<Result<Vec<_>>>()?;
    SteModel::new(comps, vec![x0])
}

/// Evaluates the model at every grid point, in order. The error for the
/// first offending point carries its index.
pub fn predict_grid(model: &SteModel, grid: &[EvalPoint]) -> Result<Vec<f64>> {
    grid.iter()
        .enumerate()
        .map(|(i, p)| evaluate(model, p).map_err(|e| e.at_row(i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::E;

    /// Mean and standard error of `f(z)` for `z ~ N(0, 1)`.
    fn mc<F: Fn(f64) -> f64>(n: usize, seed: u64, f: F) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = f(z);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn power_moment_trivial_cases() {
        assert_eq!(power_moment(2.0, 3.0, 0.0).unwrap(), 8.0);
        assert_eq!(power_moment(1.0, 7.3, 2.1).unwrap(), 1.0);
        assert!(power_moment(0.0, 1.0, 1.0).is_err());
        assert!(power_moment(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn centered_power_moment_trivial_cases() {
        assert_eq!(centered_power_moment(5.0, 2.0, 0.0).unwrap(), 0.0);
        assert_eq!(centered_power_moment(1.0, 2.0, 3.0).unwrap(), 0.0);
        assert!(centered_power_moment(0.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn moments_at_e_match_monte_carlo() {
        let expected = 0.5f64.exp();
        assert!((power_moment(E, 0.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((centered_power_moment(E, 0.0, 1.0).unwrap() - expected).abs() < 1e-15);

        let (m, se) = mc(1_000_000, 1, |z| z.exp());
        assert!((m - expected).abs() <= 3.0 * se, "{m} vs {expected} (se {se})");
        let (m, se) = mc(1_000_000, 2, |z| z * z.exp());
        assert!((m - expected).abs() <= 3.0 * se, "{m} vs {expected} (se {se})");
    }

    #[test]
    fn power_moment_grows_with_sigma_above_one() {
        for &delta in &[1.5, 3.0, 10.0] {
            let mut prev = power_moment(delta, 0.7, 0.0).unwrap();
            assert!(prev >= (0.7 * delta.ln()).exp() * (1.0 - 1e-15));
            for i in 1..50 {
                let s = i as f64 * 0.05;
                let cur = power_moment(delta, 0.7, s).unwrap();
                assert!(cur > prev);
                assert!(cur >= (0.7 * delta.ln()).exp());
                prev = cur;
            }
        }
    }

    #[test]
    fn degenerate_component_is_a_monomial() {
        let c = ComponentParams::univariate(1.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(eval_component(&c, &[3.0], &[0.0]).unwrap(), 3.0);
    }

    #[test]
    fn unit_offset_collapses_to_mu_a() {
        let c = ComponentParams::new(-2.75, 0.9, vec![3.1, -1.2], vec![0.7, 2.0], vec![0.3, -0.4]).unwrap();
        assert_eq!(eval_component(&c, &[1.5, 0.0], &[0.5, -1.0]).unwrap(), -2.75);
    }

    #[test]
    fn bivariate_component_matches_monte_carlo() {
        let (mu_a, sa, mu_n, sn, rho) = (0.5, 0.3, 1.2, 0.4, 0.6);
        let c = ComponentParams::univariate(mu_a, sa, mu_n, sn, rho).unwrap();
        let closed = eval_component(&c, &[2.0], &[0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let pw = mu_n + sn * z1;
            let a = mu_a + sa * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            let v = a * 2f64.powf(pw);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - closed).abs() <= 3.0 * se, "{mean} vs {closed} (se {se})");
    }

    #[test]
    fn component_decomposition_agrees() {
        let c = ComponentParams::new(0.8, 1.3, vec![0.5, 2.0, -0.3], vec![0.2, 0.9, 0.4], vec![0.1, -0.5, 0.6])
            .unwrap();
        let x0 = [0.0, -1.0, 0.5];
        for x in [[0.3, 0.2, 0.9], [2.0, 3.0, 4.0], [7.0, -0.5, 1.5]] {
            let direct = eval_component(&c, &x, &x0).unwrap();
            let deltas: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let pm: Vec<f64> =
                (0..3).map(|r| power_moment(deltas[r], c.mu_n[r], c.sigma_n[r]).unwrap()).collect();
            let mut decomposed = c.mu_a * pm.iter().product::<f64>();
            for r in 0..3 {
                let others: f64 = (0..3).filter(|&q| q != r).map(|q| pm[q]).product();
                decomposed += c.sigma_a * c.rho[r] / c.sigma_n[r]
                    * centered_power_moment(deltas[r], c.mu_n[r], c.sigma_n[r]).unwrap()
                    * others;
            }
            assert!((direct - decomposed).abs() <= 1e-12 * direct.abs(), "{direct} vs {decomposed}");
        }
    }

    #[test]
    fn paper_identity_fit_at_one() {
        // sigma_n^2 / 2 = 2.517725e-5 and rho sigma_a sigma_n = 2.031777e-5
        let sn = (2.0 * 2.517725e-5f64).sqrt();
        let sa = 1.0;
        let rho = 2.031777e-5 / (sa * sn);
        let c = ComponentParams::univariate(1.000023, sa, 0.9999452, sn, rho).unwrap();
        let m = SteModel::new(vec![c], vec![0.0]).unwrap();
        assert_eq!(evaluate(&m, &[1.0]).unwrap(), 1.000023);
        // Near-identity elsewhere.
        let v = evaluate(&m, &[5.0]).unwrap();
        assert!((v - 5.0).abs() < 1e-3);
    }

    #[test]
    fn two_component_unit_offset() {
        let m = SteModel::new(
            vec![
                ComponentParams::new(2.0, 0.4, vec![1.0, 2.0], vec![0.3, 0.3], vec![0.2, 0.2]).unwrap(),
                ComponentParams::new(-0.5, 0.1, vec![0.0, 1.0], vec![0.5, 0.1], vec![-0.2, 0.9]).unwrap(),
            ],
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(evaluate(&m, &[2.0, 3.0]).unwrap(), 1.5);
        let g = GeneralIntensity::new(0.5, vec![1.0], vec![m.components()[1].clone()], vec![1.0, 2.0]).unwrap();
        assert_eq!(evaluate_general(&g, &[2.0, 3.0]).unwrap(), 0.5 * 2.0);
    }

    #[test]
    fn general_reduces_to_model_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 1..=10 {
            let comps: Vec<ComponentParams> = (0..m)
                .map(|_| {
                    ComponentParams::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(0.0..1.0),
                        vec![rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0)],
                        vec![rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)],
                        vec![rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)],
                    )
                    .unwrap()
                })
                .collect();
            let model = SteModel::new(comps, vec![0.0, 0.0]).unwrap();
            let g = GeneralIntensity::from_model(&model);
            for x in [[0.3, 0.7], [1.7, 2.3], [4.0, 0.1]] {
                assert_eq!(
                    evaluate(&model, &x).unwrap().to_bits(),
                    evaluate_general(&g, &x).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn taylor_polynomial_special_case() {
        let cubic = from_taylor_polynomial(&[0.0, -6.0, 0.0, 1.0], 0.0).unwrap();
        assert!((evaluate(&cubic, &[2.0]).unwrap() + 4.0).abs() < 1e-12);
        let one = from_taylor_polynomial(&[1.0], 3.0).unwrap();
        assert_eq!(evaluate(&one, &[3.5]).unwrap(), 1.0);
        assert_eq!(evaluate(&one, &[100.0]).unwrap(), 1.0);
        let exp4 = from_taylor_polynomial(&[1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0], 0.0).unwrap();
        assert!((evaluate(&exp4, &[1.0]).unwrap() - 2.708_333_333_333_333).abs() < 1e-14);
        assert!(from_taylor_polynomial(&[], 0.0).is_err());
    }

    #[test]
    fn predict_grid_behaviour() {
        let ident = from_taylor_polynomial(&[0.0, 1.0], 0.0).unwrap();
        let grid: Vec<EvalPoint> = [1.0, 2.0, 3.0].iter().map(|&v| v.into()).collect();
        let out = predict_grid(&ident, &grid).unwrap();
        for (o, e) in out.iter().zip([1.0, 2.0, 3.0]) {
            assert!((o - e).abs() < 1e-15);
        }
        assert!(predict_grid(&ident, &[]).unwrap().is_empty());

        let cubic = from_taylor_polynomial(&[1.0, -2.0, 0.5, 0.25], 0.5).unwrap();
        let pts = [0.6, 1.0, 1.7, 2.9, 4.4];
        let grid: Vec<EvalPoint> = pts.iter().map(|&v| v.into()).collect();
        let out = predict_grid(&cubic, &grid).unwrap();
        for (o, x) in out.iter().zip(pts) {
            let t = x - 0.5;
            let poly = 1.0 - 2.0 * t + 0.5 * t * t + 0.25 * t * t * t;
            assert!((o - poly).abs() <= 1e-12 * (1.0 + poly.abs()));
        }

        let bad: Vec<EvalPoint> = [1.0, 0.0, -1.0].iter().map(|&v| v.into()).collect();
        match predict_grid(&ident, &bad) {
            Err(SteError::AtRow { row: 2, source }) => assert!(matches!(*source, SteError::Domain { .. })),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn domain_errors() {
        let m = from_taylor_polynomial(&[1.0, 1.0], 1.0).unwrap();
        assert!(matches!(evaluate(&m, &[1.0]), Err(SteError::Domain { .. })));
        assert!(matches!(evaluate(&m, &[0.5]), Err(SteError::Domain { .. })));
        assert!(matches!(evaluate(&m, &[2.0, 2.0]), Err(SteError::Dimension { .. })));
    }

    #[test]
    fn overflow_is_explicit() {
        // delta^(1 + 2 ln delta) at delta = 1e12 has log-magnitude ~ 1550
        let c = ComponentParams::univariate(1.0, 0.0, 1.0, 2.0, 0.0).unwrap();
        let m = SteModel::new(vec![c], vec![0.0]).unwrap();
        assert!(matches!(evaluate(&m, &[1e12]), Err(SteError::NumericRange { .. })));
        // Large but representable values go through the scaled path.
        let c = ComponentParams::degenerate(1e-300, vec![140.0]).unwrap();
        let m = SteModel::new(vec![c], vec![0.0]).unwrap();
        let v = evaluate(&m, &[1e4]).unwrap();
        assert!(((v / 1e260) - 1.0).abs() < 1e-10, "{v}");
        // Cancelling huge terms.
        let a = ComponentParams::degenerate(1.0, vec![100.0]).unwrap();
        let b = ComponentParams::degenerate(-1.0, vec![100.0]).unwrap();
        let m = SteModel::new(vec![a, b], vec![0.0]).unwrap();
        assert_eq!(evaluate(&m, &[1e4]).unwrap(), 0.0);
    }
}
