use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sasaki_core::functionals::{
    bochner_kodaira_residual, energy_functionals, futaki, futaki_ibp_residual, poincare_slack, potential_moments,
    random_test_function, FutakiMethod,
};
use sasaki_core::geometry::{dhomothety, validate_state, SasakiScalars};
use sasaki_core::spectral1d::legendre;
use sasaki_core::stability::assemble_l;
use sasaki_core::{BackgroundGeometry, Field, GeometryConfig, Grid, MetricState};

const N: usize = 64;

fn background(pm: f64, pp: f64) -> Arc<BackgroundGeometry> {
    BackgroundGeometry::new(GeometryConfig::new(pm, pp, N)).unwrap().shared()
}

fn series(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().enumerate().map(|(k, c)| c * legendre(k, x).0).sum()
}

/// Smooth potential whose `Δ₀`-image is of order `amp` on a background with
/// slopes up to 2.
fn potential(grid: &Grid, raw: &[f64], amp: f64) -> Field {
    let coeffs: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(k, c)| if k == 0 { *c } else { amp * c / (k * (k + 1)) as f64 })
        .collect();
    grid.sample(|x| series(&coeffs, x))
}

fn coefficients() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 7)
}

fn slopes() -> impl Strategy<Value = (f64, f64)> {
    (0.5f64..3.0, 0.5f64..3.0)
}

fn state(pm: f64, pp: f64, raw: &[f64]) -> MetricState {
    let bg = background(pm, pp);
    let phi = potential(bg.grid(), raw, 0.25);
    validate_state(&phi, &bg).expect("coefficients are scaled to stay admissible")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_invariants(n in 8usize..200) {
        let g = Grid::new(n).unwrap();
        let x = g.nodes();
        prop_assert!(x[0] > -1.0 && x[n - 1] < 1.0);
        prop_assert!(x.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(g.weights().iter().all(|&w| w > 0.0));
        for k in [0, 1, 2 * n - 2, 2 * n - 1] {
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k + 1) as f64 };
            let got = g.integrate(&g.sample(|t| t.powi(k as i32))).unwrap();
            prop_assert!((got - exact).abs() < 1e-12, "k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn integration_by_parts(a in prop::collection::vec(-1.0f64..1.0, 1..20), b in prop::collection::vec(-1.0f64..1.0, 1..20)) {
        let g = Grid::new(N).unwrap();
        let f = g.sample(|x| series(&a, x));
        let h = g.sample(|x| series(&b, x));
        let lhs = g.integrate_product(&g.differentiate(&f).unwrap(), &h).unwrap()
            + g.integrate_product(&f, &g.differentiate(&h).unwrap()).unwrap();
        let boundary = series(&a, 1.0) * series(&b, 1.0) - series(&a, -1.0) * series(&b, -1.0);
        prop_assert!((lhs - boundary).abs() < 1e-10, "{lhs} vs {boundary}");
    }

    #[test]
    fn differentiation_exact_below_degree_n(c in prop::collection::vec(-1.0f64..1.0, 1..N)) {
        let g = Grid::new(N).unwrap();
        let f = g.sample(|x| series(&c, x));
        let df = g.differentiate(&f).unwrap();
        let exact = g.sample(|x| c.iter().enumerate().map(|(k, ck)| ck * legendre(k, x).1).sum());
        let scale = exact.max_abs().max(1.0);
        let err = df.zip_map(&exact, |a, b| a - b).max_abs();
        prop_assert!(err / scale < 1e-10, "relative error {:e}", err / scale);
    }

    #[test]
    fn gauge_invariance((pm, pp) in slopes(), raw in coefficients(), c in -50.0f64..50.0) {
        let s = state(pm, pp, &raw);
        let bg = s.background_arc().clone();
        let shifted = validate_state(&s.phi().shifted(c), &bg).unwrap();
        // adding c moves nodal values by eps·|c|; Δ₀ amplifies that by N², and R applies it twice
        let unit = f64::EPSILON * (1.0 + c.abs()) * (N * N) as f64;
        let gap = |a: &Field, b: &Field| a.zip_map(b, |x, y| x - y).max_abs();
        prop_assert!(gap(s.density(), shifted.density()) < 10.0 * unit);
        prop_assert!(gap(s.ricci_potential(), shifted.ricci_potential()) < 10.0 * unit);
        prop_assert!(gap(s.curvature(), shifted.curvature()) < 10.0 * unit * (N * N) as f64);
    }

    #[test]
    fn state_invariants((pm, pp) in slopes(), raw in coefficients()) {
        let s = state(pm, pp, &raw);
        let bg = s.background();
        let kappa = bg.kappa();
        prop_assert!((s.volume() - 2.0).abs() < 1e-10);
        let gb = s.integrate(s.curvature());
        prop_assert!((gb - (pm + pp) / 2.0).abs() < 1e-8, "Gauss-Bonnet {gb}");
        prop_assert!((0.5 * gb - kappa).abs() < 1e-8);
        let norm = s.integrate(&s.ricci_potential().map(|u| (-u).exp()));
        prop_assert!((norm - 2.0).abs() < 1e-10);
        // Δ_g u = κ − R
        let lap_u = s.laplacian(s.ricci_potential());
        let res = lap_u.zip_map(s.curvature(), |l, r| l - (kappa - r)).max_abs();
        prop_assert!(res < 1e-6, "Ricci potential residual {res:e}");
        // R = (R⁰ − Δ₀ log D) / D
        let direct = bg.r0()
            .zip_map(&bg.lap0(s.log_density()), |a, b| a - b)
            .zip_map(s.density(), |a, d| a / d);
        prop_assert!(direct.zip_map(s.curvature(), |a, b| a - b).max_abs() < 1e-8);
        // ∫|∂f|² dm = ½∫ϕ₀f′² dy
        let f = bg.grid().sample(|x| series(&raw, x));
        let fp = bg.grid().differentiate(&f).unwrap();
        let reduced = 0.5 * bg.grid().integrate(&bg.phi0().zip_map(&fp, |p, d| p * d * d)).unwrap();
        prop_assert!((s.integrate(&s.grad_norm_sq(&f)) - reduced).abs() < 1e-8);
    }

    #[test]
    fn moment_signs((pm, pp) in slopes(), raw in coefficients()) {
        let m = potential_moments(&state(pm, pp, &raw));
        prop_assert!(m.y >= 0.0 && m.w >= 0.0);
        prop_assert!(m.a <= 0.0, "a = {:e}", m.a);
    }

    #[test]
    fn pencil_is_self_adjoint((pm, pp) in slopes(), raw in coefficients(), seed in any::<u64>()) {
        let s = state(pm, pp, &raw);
        let p = assemble_l(&s);
        prop_assert!((&p.a - p.a.transpose()).amax() <= 1e-14 * p.a.amax().max(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_test_function(s.grid(), &mut rng, 10);
        let h = random_test_function(s.grid(), &mut rng, 10);
        prop_assert!((p.dirichlet(&f, &h) - p.dirichlet(&h, &f)).abs() < 1e-12);
        prop_assert!((p.mass(&f, &h) - p.mass(&h, &f)).abs() < 1e-12);
    }

    #[test]
    fn futaki_integration_by_parts((pm, pp) in slopes(), raw in coefficients(), seed in any::<u64>()) {
        let s = state(pm, pp, &raw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_test_function(s.grid(), &mut rng, 12);
        prop_assert!(futaki_ibp_residual(&h, &s) < 1e-8);
        let closed = futaki(&s, FutakiMethod::ClosedForm);
        prop_assert!((closed - (pp - pm) / 2.0).abs() < 1e-15);
        for m in [FutakiMethod::GradientPairing, FutakiMethod::CurvatureWeighted] {
            prop_assert!((futaki(&s, m) - closed).abs() < 1e-6, "{m:?}");
        }
    }

    #[test]
    fn bochner_kodaira((pm, pp) in slopes(), raw in coefficients(), seed in any::<u64>()) {
        let s = state(pm, pp, &raw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_test_function(s.grid(), &mut rng, 12);
        prop_assert!(bochner_kodaira_residual(&f, &s) < 1e-6);
        prop_assert!(bochner_kodaira_residual(s.ricci_potential(), &s) < 1e-6);
    }

    #[test]
    fn poincare_inequality((pm, pp) in slopes(), raw in coefficients(), seed in any::<u64>()) {
        let s = state(pm, pp, &raw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let f = random_test_function(s.grid(), &mut rng, 12);
            prop_assert!(poincare_slack(&f, &s) >= -1e-10);
        }
    }

    #[test]
    fn i_minus_j_nonnegative((pm, pp) in slopes(), raw in coefficients(), step in coefficients()) {
        let s = state(pm, pp, &raw);
        let psi = potential(s.grid(), &step, 0.2);
        let e = energy_functionals(&psi, &s, 24).unwrap();
        prop_assert!(e.i - e.j >= -1e-12, "I - J = {:e}", e.i - e.j);
        prop_assert!(e.j >= -1e-12);
    }

    #[test]
    fn dhomothety_group_law(k in 0.1f64..10.0, a1 in 0.05f64..20.0, a2 in 0.05f64..20.0) {
        let s = SasakiScalars::unit(k);
        let lhs = dhomothety(dhomothety(s, a1).unwrap(), a2).unwrap();
        let rhs = dhomothety(s, a1 * a2).unwrap();
        let rel = |x: f64, y: f64| ((x - y) / y).abs() < 1e-14;
        prop_assert!(rel(lhs.kappa, rhs.kappa) && rel(lhs.metric_scale, rhs.metric_scale));
        prop_assert!(rel(lhs.eta_scale, rhs.eta_scale) && rel(lhs.xi_scale, rhs.xi_scale));
        prop_assert!(dhomothety(s, -a1).is_err());
    }
}
