//! Identity suites over trajectories, and the two-dimensional reduction oracle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{velocity_potential_residuals, Trajectory};
use crate::functionals::{
    bochner_kodaira_residual, futaki, poincare_slack, random_test_function, y_evolution_residual, FutakiMethod,
};
use crate::geometry::{validate_state, BackgroundGeometry, GeometryConfig, MetricState};
use crate::spectral1d::{legendre, Field};
use crate::VOL;

pub const BK_TOL: f64 = 1e-6;
pub const Y_DOT_TOL: f64 = 5e-3;
/// Required improvement of the worst `Ẏ` residual when the sample cadence halves.
pub const Y_DOT_HALVING_GAIN: f64 = 3.0;
/// Residuals below this are roundoff and count as fully resolved.
pub const Y_DOT_FLOOR: f64 = 1e-12;
pub const FUTAKI_SPREAD_TOL: f64 = 1e-6;
pub const GAUSS_BONNET_TOL: f64 = 1e-8;
pub const VOLUME_TOL: f64 = 1e-9;
pub const POINCARE_FLOOR: f64 = -1e-10;
pub const POINCARE_FUNCTIONS: usize = 20;
pub const LOWEST_EIG_FLOOR: f64 = 1.0 - 5e-3;
pub const VELOCITY_TOL: f64 = 1e-5;
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    /// Worst value of the suite statistic.
    pub value: f64,
    pub threshold: f64,
    /// `value` must stay at or below the threshold, or above it for lower bounds.
    pub lower_bound: bool,
    pub passed: bool,
}

impl SuiteResult {
    fn upper(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            lower_bound: false,
            passed: value < threshold,
        }
    }

    fn lower(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            lower_bound: true,
            passed: value >= threshold,
        }
    }

    pub fn line(&self) -> String {
        let rel = if self.lower_bound { ">=" } else { "<" };
        format!(
            "{} {:<28} {:>12.4e} {rel} {:e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

/// Deliberate corruption used to confirm that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flip the sign of the scalar curvature before it is integrated.
    FlipCurvature,
}

fn curvature_of(state: &MetricState, fault: Option<Fault>) -> Field {
    match fault {
        Some(Fault::FlipCurvature) => state.curvature().scaled(-1.0),
        None => state.curvature().clone(),
    }
}

/// Per-sample identity suites on one trajectory. `halved` is the same run
/// sampled at half the cadence, used for the `Ẏ` convergence check.
pub fn trajectory_suites(
    traj: &Trajectory,
    halved: Option<&Trajectory>,
    seed: u64,
    fault: Option<Fault>,
) -> Result<Vec<SuiteResult>> {
    let n = traj.samples.len();
    let target_gb = (traj.bg.p_minus() + traj.bg.p_plus()) / 2.0;
    let per_sample: Vec<Result<[f64; 5]>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let st = traj.state(i)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut bk = bochner_kodaira_residual(st.ricci_potential(), &st);
            let mut slack = f64::INFINITY;
            for k in 0..POINCARE_FUNCTIONS {
                let f = random_test_function(st.grid(), &mut rng, 12);
                slack = slack.min(poincare_slack(&f, &st));
                if k < 4 {
                    bk = bk.max(bochner_kodaira_residual(&f, &st));
                }
            }
            let futs = [
                futaki(&st, FutakiMethod::GradientPairing),
                futaki(&st, FutakiMethod::CurvatureWeighted),
                futaki(&st, FutakiMethod::ClosedForm),
            ];
            let spread = futs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - futs.iter().copied().fold(f64::INFINITY, f64::min);
            let gb = (st.integrate(&curvature_of(&st, fault)) - target_gb).abs();
            let vol = (st.volume() - VOL).abs();
            Ok([bk, slack, spread, gb, vol])
        })
        .collect();
    let mut worst = [0.0f64, f64::INFINITY, 0.0, 0.0, 0.0];
    for r in per_sample {
        let r = r?;
        worst[0] = worst[0].max(r[0]);
        worst[1] = worst[1].min(r[1]);
        worst[2] = worst[2].max(r[2]);
        worst[3] = worst[3].max(r[3]);
        worst[4] = worst[4].max(r[4]);
    }
    let mut out = vec![
        SuiteResult::upper("bochner-kodaira", worst[0], BK_TOL),
        SuiteResult::lower("poincare-slack", worst[1], POINCARE_FLOOR),
        SuiteResult::upper("futaki-spread", worst[2], FUTAKI_SPREAD_TOL),
        SuiteResult::upper("gauss-bonnet", worst[3], GAUSS_BONNET_TOL),
        SuiteResult::upper("volume-drift", worst[4], VOLUME_TOL),
    ];
    let y_dot = worst_y_dot(traj)?;
    out.push(SuiteResult::upper("y-dot-identity", y_dot, Y_DOT_TOL));
    if let Some(h) = halved {
        let fine = worst_y_dot(h)?;
        let gain = if fine <= Y_DOT_FLOOR { f64::INFINITY } else { y_dot / fine };
        out.push(SuiteResult::lower("y-dot-halving-gain", gain, Y_DOT_HALVING_GAIN));
    }
    let vel = velocity_potential_residuals(traj)?
        .into_iter()
        .map(|p| p.1)
        .fold(0.0, f64::max);
    out.push(SuiteResult::upper("u-equals-phi-dot", vel, VELOCITY_TOL));
    let lowest = traj.rows.iter().map(|r| r.lowest_eig).fold(f64::INFINITY, |m, v| {
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            m.min(v)
        }
    });
    out.push(SuiteResult::lower("lowest-eigenvalue", lowest, LOWEST_EIG_FLOOR));
    let dims: Vec<usize> = traj.rows.iter().map(|r| r.dim_hol).collect();
    let jumps = dims.windows(2).filter(|w| w[0] != w[1]).count();
    out.push(SuiteResult::upper("dim-hol-jumps", jumps as f64, 0.5));
    Ok(out)
}

/// Worst relative `Ẏ` residual over the interior samples.
pub fn worst_y_dot(traj: &Trajectory) -> Result<f64> {
    let rows = &traj.rows;
    let mut worst: f64 = 0.0;
    for i in 1..rows.len().saturating_sub(1) {
        worst = worst.max(y_evolution_residual(rows, i)?);
    }
    Ok(worst)
}

/// Compares the reduced formulas with a direct computation in the complex
/// chart `z` of the regular model, where the background metric is
/// `g⁰_{zz̄} = 2/(1+|z|²)²` with Kähler potential `2 log cosh(s/2)`, `s = log|z|²`,
/// and the moment coordinate is `y = tanh(s/2)`. Everything on the chart
/// side comes from eighth-order finite differences of the total potential.
pub fn reduction_oracle(n: usize, seed: u64, samples: usize) -> Result<SuiteResult> {
    let bg = BackgroundGeometry::new(GeometryConfig::regular(n))?.shared();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        // |Δ₀P_k| = k(k+1)/2 on [-1, 1], so these keep D within [0.4, 1.6]
        let coeffs: Vec<f64> = (0..=6)
            .map(|k| if k == 0 { 0.0 } else { rng.gen_range(-0.2..0.2) / (k * (k + 1)) as f64 })
            .collect();
        worst = worst.max(oracle_discrepancy(&bg, &coeffs, &mut rng)?);
    }
    Ok(SuiteResult::upper("reduction-oracle", worst, ORACLE_TOL))
}

fn series(coeffs: &[f64], y: f64) -> f64 {
    coeffs.iter().enumerate().map(|(k, c)| c * legendre(k, y).0).sum()
}

/// Worst mismatch in `log D`, `R` and `|∂u|²` for `φ = Σ c_k P_k`.
pub fn oracle_discrepancy<R: Rng>(bg: &Arc<BackgroundGeometry>, coeffs: &[f64], rng: &mut R) -> Result<f64> {
    let phi_y = |y: f64| series(coeffs, y);
    let state = validate_state(&bg.grid().sample(phi_y), bg)?;
    let grid = bg.grid();
    let grad_u = state.grad_norm_sq(state.ricci_potential());

    let y_of = |x1: f64, x2: f64| ((x1 * x1 + x2 * x2).ln() / 2.0).tanh();
    let total = |x1: f64, x2: f64| {
        let s = (x1 * x1 + x2 * x2).ln();
        2.0 * (s / 2.0).cosh().ln() + phi_y(y_of(x1, x2))
    };
    let mut worst: f64 = 0.0;
    for y0 in [-0.8f64, -0.35, 0.0, 0.4, 0.75] {
        // |z|² = e^s = (1 + y)/(1 − y)
        let r0 = ((1.0 + y0) / (1.0 - y0)).sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let (c1, c2) = (r0 * theta.cos(), r0 * theta.sin());
        let h = 0.03 * r0;
        let g = |x1: f64, x2: f64| laplacian8(&total, x1, x2, h) / 4.0;
        let g0 = |x1: f64, x2: f64| 2.0 / (1.0 + x1 * x1 + x2 * x2).powi(2);
        let log_g = |x1: f64, x2: f64| g(x1, x2).ln();
        let u = |x1: f64, x2: f64| (g(x1, x2) / g0(x1, x2)).ln() + phi_y(y_of(x1, x2));

        let g_c = g(c1, c2);
        let log_d = (g_c / g0(c1, c2)).ln();
        let r = -laplacian8(&log_g, c1, c2, h) / (4.0 * g_c);
        let (u1, u2) = gradient8(&u, c1, c2, h);
        let grad = (u1 * u1 + u2 * u2) / (4.0 * g_c);

        let reduced_log_d = grid.interpolate(state.log_density(), y0)?;
        let reduced_r = grid.interpolate(state.curvature(), y0)?;
        let reduced_grad = grid.interpolate(&grad_u, y0)?;
        worst = worst
            .max((log_d - reduced_log_d).abs())
            .max((r - reduced_r).abs())
            .max((grad - reduced_grad).abs());
    }
    Ok(worst)
}

const D1: [f64; 9] = [
    1.0 / 280.0,
    -4.0 / 105.0,
    1.0 / 5.0,
    -4.0 / 5.0,
    0.0,
    4.0 / 5.0,
    -1.0 / 5.0,
    4.0 / 105.0,
    -1.0 / 280.0,
];
const D2: [f64; 9] = [
    -1.0 / 560.0,
    8.0 / 315.0,
    -1.0 / 5.0,
    8.0 / 5.0,
    -205.0 / 72.0,
    8.0 / 5.0,
    -1.0 / 5.0,
    8.0 / 315.0,
    -1.0 / 560.0,
];

fn laplacian8(f: &impl Fn(f64, f64) -> f64, x1: f64, x2: f64, h: f64) -> f64 {
    let mut s = 0.0;
    for (k, c) in D2.iter().enumerate() {
        let o = (k as f64 - 4.0) * h;
        s += c * (f(x1 + o, x2) + f(x1, x2 + o));
    }
    s / (h * h)
}

fn gradient8(f: &impl Fn(f64, f64) -> f64, x1: f64, x2: f64, h: f64) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    for (k, c) in D1.iter().enumerate() {
        let o = (k as f64 - 4.0) * h;
        a += c * f(x1 + o, x2);
        b += c * f(x1, x2 + o);
    }
    (a / h, b / h)
}
