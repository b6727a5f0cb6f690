use proptest::prelude::*;

use ste_core::fit::{pack_params, unpack_params};
use ste_core::metrics::{integrated_sq_distance, l1_distance};
use ste_core::sim::nearest_rank;
use ste_core::{evaluate, ComponentParams, GridSpec, SteModel};

fn component(d: usize) -> impl Strategy<Value = ComponentParams> {
    (
        -3.0..3.0f64,
        1e-3..1.5f64,
        prop::collection::vec(-1.0..3.0f64, d),
        prop::collection::vec(1e-3..0.8f64, d),
        prop::collection::vec(-0.6..0.6f64, d),
    )
        .prop_map(|(mu_a, sigma_a, mu_n, sigma_n, mut rho)| {
            let s: f64 = rho.iter().map(|r| r * r).sum();
            if s > 0.9 {
                rho.iter_mut().for_each(|r| *r *= (0.9 / s).sqrt());
            }
            ComponentParams::new(mu_a, sigma_a, mu_n, sigma_n, rho).unwrap()
        })
}

fn model() -> impl Strategy<Value = SteModel> {
    (1usize..=3)
        .prop_flat_map(|d| (prop::collection::vec(component(d), 1..=4), prop::collection::vec(-2.0..2.0f64, d)))
        .prop_map(|(comps, x0)| SteModel::new(comps, x0).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn component_order_is_irrelevant(m in model(), shift in 0usize..4, offs in prop::collection::vec(0.05..3.0f64, 3)) {
        let mut comps = m.components().to_vec();
        let k = shift % comps.len();
        comps.rotate_left(k);
        comps.reverse();
        let permuted = SteModel::new(comps, m.x0().to_vec()).unwrap();
        let x: Vec<f64> = m.x0().iter().zip(&offs).map(|(o, h)| o + h).collect();
        prop_assert_eq!(evaluate(&m, &x).unwrap().to_bits(), evaluate(&permuted, &x).unwrap().to_bits());
    }

    #[test]
    fn unit_offset_collapses_to_coefficient_sum(m in model()) {
        let x: Vec<f64> = m.x0().iter().map(|o| o + 1.0).collect();
        let expect: f64 = m.components().iter().map(|c| c.mu_a).sum();
        prop_assert!(close(evaluate(&m, &x).unwrap(), expect, 1e-12));
    }

    #[test]
    fn json_round_trip_is_exact(m in model(), s2 in 0.0..10.0f64) {
        let m = m.with_sigma2(s2).unwrap();
        let back = SteModel::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn pack_unpack_round_trip(m in model()) {
        let v = pack_params(&m);
        let back = unpack_params(&v, m.m(), m.d(), m.x0()).unwrap();
        prop_assert_eq!(back.m(), m.m());
        for (a, b) in back.components().iter().zip(m.components()) {
            prop_assert!(close(a.mu_a, b.mu_a, 1e-12));
            prop_assert!(close(a.sigma_a, b.sigma_a, 1e-9));
            for r in 0..m.d() {
                prop_assert!(close(a.mu_n[r], b.mu_n[r], 1e-12));
                prop_assert!(close(a.sigma_n[r], b.sigma_n[r], 1e-9));
                prop_assert!(close(a.rho[r], b.rho[r], 1e-9));
            }
        }
    }

    #[test]
    fn distances_are_symmetric_and_scale(
        f in prop::collection::vec(-5.0..5.0f64, 20),
        g in prop::collection::vec(-5.0..5.0f64, 20),
        c in -4.0..4.0f64,
    ) {
        let grid = GridSpec::new(vec![0.5], vec![2.0], 20).unwrap();
        let d = integrated_sq_distance(&f, &g, &grid).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(close(d, integrated_sq_distance(&g, &f, &grid).unwrap(), 1e-12));
        prop_assert_eq!(integrated_sq_distance(&f, &f, &grid).unwrap(), 0.0);
        let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
        let cg: Vec<f64> = g.iter().map(|v| c * v).collect();
        prop_assert!(close(integrated_sq_distance(&cf, &cg, &grid).unwrap(), c * c * d, 1e-10));
        let l1 = l1_distance(&f, &g, &grid).unwrap();
        prop_assert!(close(l1_distance(&cf, &cg, &grid).unwrap(), c.abs() * l1, 1e-10));
    }

    #[test]
    fn quantiles_are_monotone(mut xs in prop::collection::vec(-1e3..1e3f64, 1..200), p in 0.0..1.0f64, q in 0.0..1.0f64) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = nearest_rank(&xs, lo);
        let b = nearest_rank(&xs, hi);
        prop_assert!(a <= b);
        prop_assert!(xs.contains(&a));
    }
}
