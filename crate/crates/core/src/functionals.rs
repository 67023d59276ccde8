//! Scalar functionals and identity residuals evaluated on metric states.
//!
//! Conventions: `|∂f|² = ϕ₀f′²/(2D)` is the complex gradient norm, `Δ` the
//! complex Laplacian `Δ₀/D`, and every integral uses `dm = D dy` with
//! `Vol = 2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricState;
use crate::spectral1d::{legendre, Field, Grid};
use crate::stability::SpectrumReport;
use crate::VOL;

/// One sample of the diagnostics time series.
///
/// The first block mirrors the CSV columns. The remaining fields are kept for
/// identity checks and are not serialized to the table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub y: f64,
    pub w: f64,
    pub z: f64,
    pub a: f64,
    pub vol: f64,
    pub r_mean: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub osc_u: f64,
    pub grad_u_max: f64,
    pub fut: f64,
    pub mabuchi: f64,
    pub nu: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub diam_t: f64,
    pub dim_hol: usize,
    pub shi_m1: f64,
    pub shi_m2: f64,
    pub equiv_int: f64,

    /// Right-hand side of the `Ẏ` identity at this state.
    pub y_rhs: f64,
    pub u_max: f64,
    pub fut_curvature: f64,
    pub fut_closed: f64,
    pub gauss_bonnet: f64,
    pub lowest_eig: f64,
    pub r_abs_max: f64,
    pub grad_r_max: f64,
    pub hess_r_max: f64,
}

/// Column names of the time-series table, in order.
pub const CSV_COLUMNS: [&str; 21] = [
    "t", "Y", "W", "Z", "a", "vol", "R_mean", "R_min", "R_max", "osc_u", "grad_u_max", "fut",
    "mabuchi", "nu", "lambda_lo", "lambda_hi", "diam_T", "dim_hol", "shi_m1", "shi_m2",
    "equiv_int",
];

impl DiagnosticsRow {
    pub fn csv_values(&self) -> [String; 21] {
        let f = |v: f64| format!("{v:.17e}");
        [
            f(self.t),
            f(self.y),
            f(self.w),
            f(self.z),
            f(self.a),
            f(self.vol),
            f(self.r_mean),
            f(self.r_min),
            f(self.r_max),
            f(self.osc_u),
            f(self.grad_u_max),
            f(self.fut),
            f(self.mabuchi),
            f(self.nu),
            f(self.lambda_lo),
            f(self.lambda_hi),
            f(self.diam_t),
            self.dim_hol.to_string(),
            f(self.shi_m1),
            f(self.shi_m2),
            f(self.equiv_int),
        ]
    }
}

/// Weighted moments of the Ricci potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialMoments {
    pub a: f64,
    pub y: f64,
    pub w: f64,
    pub z: f64,
}

/// `1 − (1 + u)e^{−u} ≥ 0`. Since `∫e^{−u} dm = Vol`, `a = −Vol⁻¹∫ this dm`.
fn entropy_gap(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        u * u * (0.5 - u / 3.0 + u * u / 8.0)
    } else {
        1.0 - (1.0 + u) * (-u).exp()
    }
}

/// `a`, `Y`, `W`, `Z` of a state.
pub fn potential_moments(state: &MetricState) -> PotentialMoments {
    let u = state.ricci_potential();
    let kappa = state.kappa();
    let g = state.grad_norm_sq(u);
    let mw = state.measure_weights();
    let mut a = 0.0;
    let mut y = 0.0;
    for i in 0..u.len() {
        a -= mw[i] * entropy_gap(u[i]);
        y += mw[i] * g[i];
    }
    a /= VOL;
    let mut w = 0.0;
    let mut z = 0.0;
    for i in 0..u.len() {
        let e = mw[i] * (-u[i]).exp();
        let d2 = (u[i] - a) * (u[i] - a);
        w += e * d2;
        z += e * (g[i] - kappa * d2);
    }
    PotentialMoments {
        a,
        y,
        w: w / VOL,
        z: z / VOL,
    }
}

/// `∫ |∇̄∇̄f|² dm` density: `ϕ₀² ((f′/D)′)² / 4`.
pub fn pure_hessian_sq(f: &Field, state: &MetricState) -> Field {
    let grid = state.grid();
    let fp = grid.differentiate_slice(f.values());
    let ratio = fp.zip_map(state.density(), |a, d| a / d);
    let rp = grid.differentiate_slice(ratio.values());
    Field::new(
        (0..f.len())
            .map(|i| {
                let p = state.background().phi0()[i];
                p * p * rp[i] * rp[i] / 4.0
            })
            .collect(),
    )
}

/// Norm of the real Hessian `|∇²f|`.
pub fn real_hessian_norm(f: &Field, state: &MetricState) -> Field {
    let grid = state.grid();
    let lap = state.laplacian(f);
    let fp = grid.differentiate_slice(f.values());
    let ratio = fp.zip_map(state.density(), |a, d| a / d);
    let rp = grid.differentiate_slice(ratio.values());
    Field::new(
        (0..f.len())
            .map(|i| {
                let s = 2.0 * lap[i];
                let d = state.background().phi0()[i] * rp[i];
                ((s * s + d * d) / 2.0).sqrt()
            })
            .collect(),
    )
}

/// Norm of the real gradient `|∇f| = √(ϕ₀/D)|f′|`.
pub fn real_gradient_norm(f: &Field, state: &MetricState) -> Field {
    state.grad_norm_sq(f).map(|g| (2.0 * g).sqrt())
}

/// Terms of the Bochner–Kodaira identity
/// `∫(Δf)² dm = ∫|∇̄∇̄f|² dm + ∫R|∂f|² dm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BochnerKodaira {
    pub laplacian_sq: f64,
    pub pure_hessian: f64,
    pub curvature: f64,
}

impl BochnerKodaira {
    pub fn relative_residual(&self) -> f64 {
        let diff = self.laplacian_sq - self.pure_hessian - self.curvature;
        let scale = self.laplacian_sq.abs() + self.pure_hessian.abs() + self.curvature.abs();
        if scale == 0.0 {
            0.0
        } else {
            diff.abs() / scale
        }
    }
}

pub fn bochner_kodaira_terms(f: &Field, state: &MetricState) -> BochnerKodaira {
    let lap = state.laplacian(f);
    let hess = pure_hessian_sq(f, state);
    let g = state.grad_norm_sq(f);
    let r = state.curvature();
    BochnerKodaira {
        laplacian_sq: state.integrate(&lap.map(|v| v * v)),
        pure_hessian: state.integrate(&hess),
        curvature: state.integrate(&g.zip_map(r, |a, b| a * b)),
    }
}

pub fn bochner_kodaira_residual(f: &Field, state: &MetricState) -> f64 {
    bochner_kodaira_terms(f, state).relative_residual()
}

/// `2κY − ∫R|∂u|² − ∫(Δu)² − ∫|∇̄∇̄u|²`, the predicted `Ẏ`.
pub fn y_dot_rhs(state: &MetricState) -> f64 {
    let u = state.ricci_potential();
    let bk = bochner_kodaira_terms(u, state);
    let y = state.integrate(&state.grad_norm_sq(u));
    2.0 * state.kappa() * y - bk.curvature - bk.laplacian_sq - bk.pure_hessian
}

/// Second-order derivative estimate at interior index `i` of a nonuniform series.
pub fn central_difference(ts: &[f64], vs: &[f64], i: usize) -> Result<f64> {
    if i == 0 || i + 1 >= ts.len() || ts.len() != vs.len() {
        return Err(Error::Usage(format!("index {i} is not an interior sample")));
    }
    let h1 = ts[i] - ts[i - 1];
    let h2 = ts[i + 1] - ts[i];
    Ok(-h2 / (h1 * (h1 + h2)) * vs[i - 1]
        + (h2 - h1) / (h1 * h2) * vs[i]
        + h1 / (h2 * (h1 + h2)) * vs[i + 1])
}

/// Relative mismatch between the finite-difference `Ẏ` and the identity's
/// right-hand side at sample `i`.
pub fn y_evolution_residual(rows: &[DiagnosticsRow], i: usize) -> Result<f64> {
    if i == 0 || i + 1 >= rows.len() {
        return Err(Error::Usage(format!("index {i} is a boundary sample")));
    }
    let ts = [rows[i - 1].t, rows[i].t, rows[i + 1].t];
    let ys = [rows[i - 1].y, rows[i].y, rows[i + 1].y];
    let fd = central_difference(&ts, &ys, 1)?;
    let rhs = rows[i].y_rhs;
    let scale = fd.abs().max(rows[i].y).max(1e-14);
    Ok((fd - rhs).abs() / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FutakiMethod {
    GradientPairing,
    CurvatureWeighted,
    ClosedForm,
}

/// Futaki invariant evaluated on the evolving moment map `h_t`.
pub fn futaki(state: &MetricState, method: FutakiMethod) -> f64 {
    let bg = state.background();
    match method {
        FutakiMethod::ClosedForm => (bg.p_plus() - bg.p_minus()) / 2.0,
        FutakiMethod::GradientPairing => {
            // ∫⟨∂h, ∂u⟩ dm with h′ = D
            let up = state.grid().differentiate_slice(state.ricci_potential().values());
            let w = state.grid().weights();
            (0..up.len())
                .map(|i| 0.5 * w[i] * bg.phi0()[i] * state.density()[i] * up[i])
                .sum()
        }
        FutakiMethod::CurvatureWeighted => {
            let h = state.moment_map();
            let k = state.kappa();
            state.integrate(&h.zip_map(state.curvature(), |h, r| h * (r - k)))
        }
    }
}

/// `|∫⟨∂h,∂u⟩ dm − ∫h(R−κ) dm|` for an arbitrary test function `h`.
pub fn futaki_ibp_residual(h: &Field, state: &MetricState) -> f64 {
    let k = state.kappa();
    let lhs = state.integrate(&state.grad_pairing(h, state.ricci_potential()));
    let rhs = state.integrate(&h.zip_map(state.curvature(), |h, r| h * (r - k)));
    (lhs - rhs).abs()
}

/// Slack of the weighted Poincaré inequality
/// `Vol⁻¹∫f²e^{-u} dm ≤ κ⁻¹Vol⁻¹∫|∂f|²e^{-u} dm + (Vol⁻¹∫fe^{-u} dm)²`.
pub fn poincare_slack(f: &Field, state: &MetricState) -> f64 {
    let u = state.ricci_potential();
    let g = state.grad_norm_sq(f);
    let mw = state.measure_weights();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..f.len() {
        let e = mw[i] * (-u[i]).exp();
        m0 += e * f[i];
        m1 += e * f[i] * f[i];
        m2 += e * g[i];
    }
    let (m0, m1, m2) = (m0 / VOL, m1 / VOL, m2 / VOL);
    m2 / state.kappa() + m0 * m0 - m1
}

/// Smooth random test function: Legendre series with decaying random
/// coefficients.
pub fn random_test_function<R: Rng>(grid: &Grid, rng: &mut R, degree: usize) -> Field {
    let coeffs: Vec<f64> = (0..=degree)
        .map(|k| rng.gen_range(-1.0..1.0) / (1.0 + k as f64).powi(2))
        .collect();
    grid.sample(|x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * legendre(k, x).0)
            .sum()
    })
}

/// Fills the per-state columns of a diagnostics row. Trajectory monitors
/// (`mabuchi`, `shi_*`, `equiv_int`) are left at zero.
pub fn state_row(state: &MetricState, spectrum: Option<&SpectrumReport>) -> DiagnosticsRow {
    let m = potential_moments(state);
    let u = state.ricci_potential();
    let r = state.curvature();
    let grad_u = real_gradient_norm(u, state);
    let vol = state.volume();
    let r_int = state.integrate(r);
    let mut row = DiagnosticsRow {
        t: state.t(),
        y: m.y,
        w: m.w,
        z: m.z,
        a: m.a,
        vol,
        r_mean: r_int / VOL,
        r_min: r.min(),
        r_max: r.max(),
        osc_u: u.oscillation(),
        grad_u_max: grad_u.max(),
        fut: futaki(state, FutakiMethod::GradientPairing),
        fut_curvature: futaki(state, FutakiMethod::CurvatureWeighted),
        fut_closed: futaki(state, FutakiMethod::ClosedForm),
        gauss_bonnet: r_int,
        y_rhs: y_dot_rhs(state),
        u_max: u.max_abs(),
        diam_t: crate::geometry::transverse_diameter(state),
        r_abs_max: r.max_abs(),
        grad_r_max: real_gradient_norm(r, state).max(),
        hess_r_max: real_hessian_norm(r, state).max(),
        nu: f64::NAN,
        lambda_lo: f64::NAN,
        lambda_hi: f64::NAN,
        lowest_eig: f64::NAN,
        ..Default::default()
    };
    if let Some(s) = spectrum {
        row.nu = s.nu;
        row.lambda_lo = s.lambda_proxy.0;
        row.lambda_hi = s.lambda_proxy.1;
        row.dim_hol = s.dim_hol_sector;
        row.lowest_eig = s.eigenvalues.first().copied().unwrap_or(f64::NAN);
    }
    row
}

/// Full diagnostics for a state, accumulating the Mabuchi energy
/// `ν(t) = −∫₀ᵗ Y ds` from the previous rows by the trapezoid rule.
pub fn diagnostics(
    state: &MetricState,
    prev_rows: &[DiagnosticsRow],
    spectrum: Option<&SpectrumReport>,
) -> DiagnosticsRow {
    let mut row = state_row(state, spectrum);
    if let Some(p) = prev_rows.last() {
        row.mabuchi = p.mabuchi - 0.5 * (row.t - p.t) * (row.y + p.y);
    }
    row
}

/// `I`, `J`, `L`, `M` of a potential relative to a reference state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub i: f64,
    pub j: f64,
    pub l: f64,
    pub m: f64,
}

/// Energy functionals along the linear path `s ↦ φ_ref + sψ`, integrated in
/// `s` by a `steps`-point Gauss rule.
pub fn energy_functionals(psi: &Field, reference: &MetricState, steps: usize) -> Result<EnergyReport> {
    if steps < 16 {
        return Err(Error::Config(format!("path resolution {steps} is below 16")));
    }
    let bg = reference.background();
    if psi.len() != bg.size() {
        return Err(Error::GridMismatch {
            expected: bg.size(),
            found: psi.len(),
        });
    }
    let grid = bg.grid();
    let w = grid.weights();
    let n = psi.len();
    let kappa = bg.kappa();
    let d_ref = reference.density();
    let lap_psi = bg.lap0(psi);
    let d_at = |s: f64| -> Result<Field> {
        let d = d_ref.zip_map(&lap_psi, |a, b| a + s * b);
        if d.values().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::PathInadmissible { s });
        }
        Ok(d)
    };
    let d_end = d_at(1.0)?;
    let i_val: f64 = (0..n).map(|k| w[k] * psi[k] * (d_ref[k] - d_end[k])).sum::<f64>() / VOL;

    let rule = Grid::new_unchecked(steps);
    let (mut j_val, mut l_val, mut m_val) = (0.0, 0.0, 0.0);
    for (&x, &ws) in rule.nodes().iter().zip(rule.weights()) {
        let s = 0.5 * (x + 1.0);
        let ws = 0.5 * ws;
        let d = d_at(s)?;
        let log_d = d.map(f64::ln);
        let lap_log = bg.lap0(&log_d);
        let mut jj = 0.0;
        let mut ll = 0.0;
        let mut mm = 0.0;
        for k in 0..n {
            jj += w[k] * psi[k] * (d_ref[k] - d[k]);
            ll += w[k] * psi[k] * d[k];
            mm += w[k] * psi[k] * (bg.r0()[k] - lap_log[k] - kappa * d[k]);
        }
        j_val += ws * jj;
        l_val += ws * ll;
        m_val -= ws * mm;
    }
    Ok(EnergyReport {
        i: i_val,
        j: j_val / VOL,
        l: l_val / VOL,
        m: m_val / VOL,
    })
}

/// The `L` functional in closed form: the path integrand is linear in `s`,
/// so `∫₀¹ Vol⁻¹∫ψ(D_ref + sΔ₀ψ) dy ds = Vol⁻¹∫ψ(D_ref + ½Δ₀ψ) dy`.
pub fn l_functional(psi: &Field, d_ref: &Field, grid: &Grid, lap_psi: &Field) -> f64 {
    let w = grid.weights();
    (0..psi.len())
        .map(|k| w[k] * psi[k] * (d_ref[k] + 0.5 * lap_psi[k]))
        .sum::<f64>()
        / VOL
}
