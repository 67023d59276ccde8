use std::sync::{Arc, OnceLock};

use sasaki_core::flow::{self, FlowConfig, Trajectory};
use sasaki_core::stability::{self, shi_monitor};
use sasaki_core::{BackgroundGeometry, Field, GeometryConfig};

fn background(pm: f64, pp: f64, n: usize) -> Arc<BackgroundGeometry> {
    BackgroundGeometry::new(GeometryConfig::new(pm, pp, n)).unwrap().shared()
}

fn p2(bg: &BackgroundGeometry, amp: f64) -> Field {
    bg.grid().sample(|x| amp * (1.5 * x * x - 0.5))
}

/// Perturbed regular run at N = 64 up to t = 6, shared by several tests.
fn perturbed() -> &'static Trajectory {
    static RUN: OnceLock<Trajectory> = OnceLock::new();
    RUN.get_or_init(|| {
        let bg = background(2.0, 2.0, 64);
        let cfg = FlowConfig {
            t_end: 6.0,
            ..Default::default()
        };
        flow::run(&p2(&bg, 0.3), &bg, &cfg).unwrap()
    })
}

fn final_phi(bg: &Arc<BackgroundGeometry>, phi0: &Field, dt: f64) -> Field {
    let cfg = FlowConfig {
        t_end: 0.4,
        adaptive: false,
        dt_init: dt,
        dt_max: dt,
        sample_start: 0.1,
        sample_every: 0.1,
        spectrum_k: 1,
        ..Default::default()
    };
    flow::run(phi0, bg, &cfg).unwrap().final_state().unwrap().phi()
}

#[test]
fn fixed_steps_converge_at_second_order() {
    let bg = background(2.0, 2.0, 32);
    let phi0 = p2(&bg, 0.3);
    let runs: Vec<Field> = [0.02, 0.01, 0.005].iter().map(|&dt| final_phi(&bg, &phi0, dt)).collect();
    let e1 = runs[0].zip_map(&runs[1], |a, b| a - b).max_abs();
    let e2 = runs[1].zip_map(&runs[2], |a, b| a - b).max_abs();
    let ratio = e1 / e2;
    // second order: each halving shrinks the change by 4
    assert!(ratio > 3.0 && ratio < 5.5, "changes {e1:e}, {e2:e}, ratio {ratio}");
}

#[test]
fn linearized_mode_decays_at_the_first_gap() {
    let bg = background(2.0, 2.0, 48);
    let eps = 1e-4;
    let cfg = FlowConfig {
        t_end: 1.0,
        ..Default::default()
    };
    let traj = flow::run(&p2(&bg, eps), &bg, &cfg).unwrap();
    let grid = bg.grid();
    for (i, s) in traj.samples.iter().enumerate().step_by(10) {
        let c = grid.to_legendre(&Field::new(s.psi.clone())).unwrap();
        let predicted = eps * (-2.0 * s.t).exp();
        // the next correction is quadratic in the amplitude
        assert!((c[2] - predicted).abs() < 10.0 * eps * eps, "sample {i}, t = {}: {} vs {predicted}", s.t, c[2]);
    }
}

#[test]
fn velocity_is_the_ricci_potential() {
    let worst = flow::velocity_potential_residuals(perturbed())
        .unwrap()
        .into_iter()
        .map(|p| p.1)
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn z_is_the_derivative_of_a() {
    let rows = &perturbed().rows;
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.a).collect();
    let mut worst: f64 = 0.0;
    // five-point stencils: the three-point one is truncation-limited in the opening transient
    for i in 2..rows.len() - 2 {
        let w = flow::fd_weights(ts[i], &ts[i - 2..=i + 2]);
        let da: f64 = w.iter().zip(&a[i - 2..=i + 2]).map(|(w, v)| w * v).sum();
        worst = worst.max((da - rows[i].z).abs());
    }
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn mabuchi_is_non_increasing_and_volume_is_fixed() {
    let rows = &perturbed().rows;
    assert!(rows.windows(2).all(|w| w[1].mabuchi <= w[0].mabuchi));
    assert!(rows.iter().all(|r| r.y >= 0.0 && r.w >= 0.0 && r.a <= 0.0));
    assert!(rows.iter().all(|r| (r.vol - 2.0).abs() < 1e-9));
}

#[test]
fn eigenvalue_proxy_brackets_the_gap() {
    let rows = &perturbed().rows;
    for r in rows {
        assert!(r.lambda_lo <= r.nu - 1.0 && r.nu - 1.0 <= r.lambda_hi, "t = {}", r.t);
    }
    // the width scales with osc u, which decays along a converging run
    let width: Vec<f64> = rows.iter().filter(|r| r.t >= 1.0).map(|r| r.lambda_hi - r.lambda_lo).collect();
    assert!(width.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(width[width.len() - 1] < 1e-3 * width[0], "{} -> {}", width[0], width[width.len() - 1]);
}

#[test]
fn metric_equivalence_bound() {
    let traj = perturbed();
    let integral = traj.rows.last().unwrap().equiv_int;
    assert!(traj.equivalence_ratio.is_finite() && integral.is_finite());
    assert!(traj.equivalence_ratio.ln() <= integral + 1e-3);
}

#[test]
fn perelman_quantities_settle() {
    let rows = &perturbed().rows;
    let late: Vec<_> = rows.iter().filter(|r| r.t >= 1.0).collect();
    for w in late.windows(2) {
        assert!(w[1].r_abs_max <= w[0].r_abs_max + 1e-12, "t = {}", w[1].t);
        assert!(w[1].u_max <= w[0].u_max + 1e-12, "t = {}", w[1].t);
        assert!(w[1].grad_u_max <= w[0].grad_u_max + 1e-12, "t = {}", w[1].t);
    }
    assert!(rows.iter().all(|r| r.diam_t.is_finite() && r.r_abs_max.is_finite()));
}

#[test]
fn shi_monitor_is_resolution_stable() {
    let sup = |n: usize| {
        let bg = background(2.0, 2.0, n);
        let cfg = FlowConfig {
            t_end: 1.0,
            spectrum_k: 1,
            ..Default::default()
        };
        shi_monitor(&flow::run(&p2(&bg, 0.3), &bg, &cfg).unwrap().rows).sup_m1
    };
    let (coarse, fine) = (sup(48), sup(96));
    assert!(coarse.is_finite() && fine.is_finite());
    assert!((coarse - fine).abs() <= 0.2 * fine, "{coarse} vs {fine}");
}

#[test]
fn obstructed_class_is_never_converged() {
    let bg = background(2.0, 1.0, 48);
    let cfg = FlowConfig {
        t_end: 4.0,
        gauge: flow::Gauge::Pinned,
        ..Default::default()
    };
    let traj = flow::run(&Field::zeros(48), &bg, &cfg).unwrap();
    let flags = stability::condition_flags(&traj.rows, stability::DELTA_T, stability::TOL_F).unwrap();
    assert!(!flags.f);
    assert!(!traj.verdict.is_converged());
    assert!(traj.rows.iter().all(|r| (r.fut + 0.5).abs() < 1e-6));
}
