//! Reduced transverse geometry on the moment interval.
//!
//! A U(1)-invariant transverse Kähler metric is described by a potential `φ`
//! over a background profile `ϕ₀` with pole slopes `(p₋, p₊)`. The density of
//! the metric relative to the background is `D = 1 + Δ₀φ` where
//! `Δ₀f = ½(ϕ₀ f′)′`. The operator is assembled in weak (Galerkin) form so that
//! integration by parts holds exactly for the discrete quadrature.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral1d::{Field, Grid};
use crate::VOL;

/// Default admissibility floor on the density.
pub const EPS_POS: f64 = 1e-8;

/// Transverse complex dimension of every model.
pub const N_TRANSVERSE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub p_minus: f64,
    pub p_plus: f64,
    pub n: usize,
}

impl GeometryConfig {
    pub fn new(p_minus: f64, p_plus: f64, n: usize) -> Self {
        Self { p_minus, p_plus, n }
    }

    /// Cone-angle weights `(a, b)`: `p₋ = 2/b`, `p₊ = 2/a`.
    pub fn from_weights(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!("weights must be positive, got ({a}, {b})")));
        }
        Ok(Self::new(2.0 / b, 2.0 / a, n))
    }

    pub fn regular(n: usize) -> Self {
        Self::new(2.0, 2.0, n)
    }

    pub fn kappa(&self) -> f64 {
        (self.p_minus + self.p_plus) / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_minus > 0.0 && self.p_plus > 0.0)
            || !self.p_minus.is_finite()
            || !self.p_plus.is_finite()
        {
            return Err(Error::Config(format!(
                "pole slopes must be positive and finite, got ({}, {})",
                self.p_minus, self.p_plus
            )));
        }
        Ok(())
    }
}

/// Reference transverse metric with its curvature and Ricci potential.
#[derive(Debug, Clone)]
pub struct BackgroundGeometry {
    config: GeometryConfig,
    grid: Grid,
    kappa: f64,
    phi0: Field,
    r0: Field,
    f: Field,
    f_prime: Field,
    /// `Δ₀` as a dense matrix: `-W⁻¹ D1ᵀ W diag(ϕ₀/2) D1`.
    lap0: DMatrix<f64>,
}

fn blend(p_minus: f64, p_plus: f64, y: f64) -> f64 {
    (p_minus * (1.0 - y) + p_plus * (1.0 + y)) / 4.0
}

impl BackgroundGeometry {
    pub fn new(config: GeometryConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::new(config.n)?;
        Ok(Self::on_grid(config, grid))
    }

    /// Builds the background on an existing grid, ignoring `config.n`.
    pub fn on_grid(mut config: GeometryConfig, grid: Grid) -> Self {
        config.n = grid.size();
        let (pm, pp) = (config.p_minus, config.p_plus);
        let kappa = config.kappa();
        let qp = (pp - pm) / 4.0;
        let phi0 = grid.sample(|y| (1.0 - y * y) * blend(pm, pp, y));
        let r0 = grid.sample(|y| blend(pm, pp, y) + 2.0 * y * qp);
        // ϕ₀F′ = -3(1-y²)q′ solves ½(ϕ₀F′)′ = R⁰ - κ and vanishes at both poles
        let f_raw = grid.sample(|y| -3.0 * blend(pm, pp, y).ln());
        let z = grid.integrate_slice(&f_raw.map(|v| (-v).exp()).into_values());
        let c = (z / VOL).ln();
        let f = f_raw.shifted(c);
        let f_prime = grid.sample(|y| -3.0 * (pp - pm) / (pm * (1.0 - y) + pp * (1.0 + y)));

        let n = grid.size();
        let d1 = grid.diff_matrix();
        let mut scaled = d1.clone();
        for i in 0..n {
            let s = grid.weights()[i] * phi0[i] / 2.0;
            scaled.row_mut(i).scale_mut(s);
        }
        let mut lap0 = -(d1.transpose() * scaled);
        for i in 0..n {
            let wi = grid.weights()[i];
            lap0.row_mut(i).scale_mut(1.0 / wi);
        }
        Self {
            config,
            grid,
            kappa,
            phi0,
            r0,
            f,
            f_prime,
            lap0,
        }
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.size()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn p_minus(&self) -> f64 {
        self.config.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.config.p_plus
    }

    pub fn phi0(&self) -> &Field {
        &self.phi0
    }

    pub fn r0(&self) -> &Field {
        &self.r0
    }

    /// Background Ricci potential, `∫e^{-F} dy = 2`.
    pub fn f(&self) -> &Field {
        &self.f
    }

    /// Closed-form `F′`, pole regular.
    pub fn f_prime(&self) -> &Field {
        &self.f_prime
    }

    /// The blend factor `q = ϕ₀/(1-y²)`.
    pub fn q(&self, y: f64) -> f64 {
        blend(self.config.p_minus, self.config.p_plus, y)
    }

    pub fn lap0_matrix(&self) -> &DMatrix<f64> {
        &self.lap0
    }

    /// `Δ₀f = ½(ϕ₀ f′)′`.
    pub fn lap0(&self, f: &Field) -> Field {
        self.lap0_slice(f.values())
    }

    pub(crate) fn lap0_slice(&self, v: &[f64]) -> Field {
        let w = self.grid.weights();
        let fp = self.grid.differentiate_slice(v);
        let flux = DVector::from_iterator(
            v.len(),
            (0..v.len()).map(|i| w[i] * self.phi0[i] * fp[i] / 2.0),
        );
        let out = self.grid.diff_matrix().tr_mul(&flux);
        Field::new((0..v.len()).map(|i| -out[i] / w[i]).collect())
    }

    /// Shared handle, convenient for building states.
    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// `D = 1 + Δ₀φ`. Admissibility is the caller's concern.
pub fn density(phi: &Field, bg: &BackgroundGeometry) -> Result<Field> {
    check_len(phi, bg)?;
    Ok(bg.lap0(phi).shifted(1.0))
}

fn check_len(f: &Field, bg: &BackgroundGeometry) -> Result<()> {
    if f.len() != bg.size() {
        return Err(Error::GridMismatch {
            expected: bg.size(),
            found: f.len(),
        });
    }
    if !f.is_finite() {
        return Err(Error::Numeric("non-finite nodal values".into()));
    }
    Ok(())
}

/// Transverse metric state with derived fields.
///
/// The potential is held as a mean-free shape `ψ` plus a scalar offset, so
/// large constant modes never leak into the derivatives.
#[derive(Debug, Clone)]
pub struct MetricState {
    bg: Arc<BackgroundGeometry>,
    t: f64,
    psi: Field,
    offset: f64,
    d: Field,
    log_d: Field,
    r: Field,
    u: Field,
}

fn grid_mean(f: &Field, grid: &Grid) -> f64 {
    grid.integrate_slice(f.values()) / VOL
}

impl MetricState {
    /// Builds a state from a potential split as `shape + offset`. Any mean left
    /// in `shape` is moved into the offset.
    pub fn from_parts(
        bg: Arc<BackgroundGeometry>,
        shape: Field,
        offset: f64,
        t: f64,
        eps_pos: f64,
    ) -> Result<Self> {
        check_len(&shape, &bg)?;
        let ell = grid_mean(&shape, bg.grid());
        let psi = shape.shifted(-ell);
        let offset = offset + ell;
        let d = bg.lap0(&psi).shifted(1.0);
        let (imin, dmin) = d
            .values()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if !(dmin > eps_pos) {
            return Err(Error::Inadmissible {
                y: bg.grid().nodes()[imin],
                value: dmin,
            });
        }
        // the metric must also be nondegenerate at the poles themselves
        for y in [-1.0, 1.0] {
            let value = bg.grid().interpolate(&d, y)?;
            if !(value > eps_pos) {
                return Err(Error::Inadmissible { y, value });
            }
        }
        let log_d = d.map(f64::ln);
        let lap_log_d = bg.lap0(&log_d);
        let r = bg
            .r0()
            .zip_map(&lap_log_d, |a, b| a - b)
            .zip_map(&d, |a, b| a / b);
        let kappa = bg.kappa();
        let u_raw = Field::new(
            (0..bg.size())
                .map(|i| kappa * psi[i] + log_d[i] - bg.f()[i])
                .collect(),
        );
        let z: f64 = (0..bg.size())
            .map(|i| bg.grid().weights()[i] * (-u_raw[i]).exp() * d[i])
            .sum();
        let u = u_raw.shifted((z / VOL).ln());
        Ok(Self {
            bg,
            t,
            psi,
            offset,
            d,
            log_d,
            r,
            u,
        })
    }

    pub fn background(&self) -> &BackgroundGeometry {
        &self.bg
    }

    pub fn background_arc(&self) -> &Arc<BackgroundGeometry> {
        &self.bg
    }

    pub fn grid(&self) -> &Grid {
        self.bg.grid()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Mean-free shape of the potential.
    pub fn psi(&self) -> &Field {
        &self.psi
    }

    /// Grid mean of the potential.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Full potential `φ = ψ + offset`.
    pub fn phi(&self) -> Field {
        self.psi.shifted(self.offset)
    }

    pub fn density(&self) -> &Field {
        &self.d
    }

    pub fn log_density(&self) -> &Field {
        &self.log_d
    }

    /// Transverse scalar curvature (complex trace).
    pub fn curvature(&self) -> &Field {
        &self.r
    }

    /// Transverse Ricci potential, `∫e^{-u} dm = 2`.
    pub fn ricci_potential(&self) -> &Field {
        &self.u
    }

    pub fn kappa(&self) -> f64 {
        self.bg.kappa()
    }

    /// Nodal weights of `dm = D dy`.
    pub fn measure_weights(&self) -> Vec<f64> {
        self.grid()
            .weights()
            .iter()
            .zip(self.d.values())
            .map(|(w, d)| w * d)
            .collect()
    }

    /// `∫ f dm`.
    pub fn integrate(&self, f: &Field) -> f64 {
        self.grid()
            .weights()
            .iter()
            .zip(self.d.values())
            .zip(f.values())
            .map(|((w, d), v)| w * d * v)
            .sum()
    }

    /// `∫ dm`.
    pub fn volume(&self) -> f64 {
        self.grid().integrate_slice(self.d.values())
    }

    /// `Δ_g f = Δ₀f / D`.
    pub fn laplacian(&self, f: &Field) -> Field {
        self.bg.lap0(f).zip_map(&self.d, |a, b| a / b)
    }

    /// `|∂f|²_g = ϕ₀ f′² / (2D)`.
    pub fn grad_norm_sq(&self, f: &Field) -> Field {
        let fp = self.grid().differentiate_slice(f.values());
        Field::new(
            (0..f.len())
                .map(|i| self.bg.phi0()[i] * fp[i] * fp[i] / (2.0 * self.d[i]))
                .collect(),
        )
    }

    /// `⟨∂f, ∂h⟩_g = ϕ₀ f′ h′ / (2D)`.
    pub fn grad_pairing(&self, f: &Field, h: &Field) -> Field {
        let fp = self.grid().differentiate_slice(f.values());
        let hp = self.grid().differentiate_slice(h.values());
        Field::new(
            (0..f.len())
                .map(|i| self.bg.phi0()[i] * fp[i] * hp[i] / (2.0 * self.d[i]))
                .collect(),
        )
    }

    /// Evolving moment map `h_t = y + ½ϕ₀φ′`, with `h_t′ = D` and `h_t(±1) = ±1`.
    pub fn moment_map(&self) -> Field {
        let pp = self.grid().differentiate_slice(self.psi.values());
        Field::new(
            (0..self.psi.len())
                .map(|i| self.grid().nodes()[i] + 0.5 * self.bg.phi0()[i] * pp[i])
                .collect(),
        )
    }
}

/// Builds the full state of `φ` on `bg`, rejecting inadmissible potentials.
pub fn validate_state(phi: &Field, bg: &Arc<BackgroundGeometry>) -> Result<MetricState> {
    validate_state_with(phi, bg, EPS_POS)
}

pub fn validate_state_with(
    phi: &Field,
    bg: &Arc<BackgroundGeometry>,
    eps_pos: f64,
) -> Result<MetricState> {
    MetricState::from_parts(bg.clone(), phi.clone(), 0.0, 0.0, eps_pos)
}

/// `u = κφ + log D − F + c` with `∫e^{-u} dm = 2`.
pub fn ricci_potential(phi: &Field, bg: &Arc<BackgroundGeometry>) -> Result<Field> {
    Ok(validate_state(phi, bg)?.u)
}

/// `|∂f|²_g` on a state.
pub fn grad_norm_sq(f: &Field, state: &MetricState) -> Result<Field> {
    check_len(f, state.background())?;
    Ok(state.grad_norm_sq(f))
}

/// Pole-to-pole meridian length `∫√(D/ϕ₀) dy`.
///
/// The integrand has inverse square-root singularities at the poles, so it is
/// written as `√(D/q) / √(1−y²)` and integrated with a Chebyshev–Gauss rule on
/// the interpolant of `√(D/q)`.
pub fn transverse_diameter(state: &MetricState) -> f64 {
    let grid = state.grid();
    let bg = state.background();
    let g = Field::new(
        (0..grid.size())
            .map(|i| (state.density()[i] / bg.q(grid.nodes()[i])).sqrt())
            .collect(),
    );
    let m = 2 * grid.size();
    let mut s = 0.0;
    for k in 0..m {
        let y = (PI * (2 * k + 1) as f64 / (2 * m) as f64).cos();
        s += grid.interpolate(&g, y).unwrap_or(f64::NAN);
    }
    s * PI / m as f64
}

/// Scale data of a Sasaki structure, acted on by D-homothety.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SasakiScalars {
    /// Transverse Einstein constant of the normalization.
    pub kappa: f64,
    pub metric_scale: f64,
    pub eta_scale: f64,
    pub xi_scale: f64,
}

impl SasakiScalars {
    pub fn unit(kappa: f64) -> Self {
        Self {
            kappa,
            metric_scale: 1.0,
            eta_scale: 1.0,
            xi_scale: 1.0,
        }
    }
}

/// D-homothety `g′ = ag + (a²−a)η⊗η`, `η′ = aη`, `ξ′ = ξ/a`. The transverse
/// metric scales by `a` while the transverse Ricci form is unchanged, so the
/// transverse Einstein constant becomes `κ/a`.
pub fn dhomothety(s: SasakiScalars, a: f64) -> Result<SasakiScalars> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Usage(format!("D-homothety factor must be positive, got {a}")));
    }
    Ok(SasakiScalars {
        kappa: s.kappa / a,
        metric_scale: s.metric_scale * a,
        eta_scale: s.eta_scale * a,
        xi_scale: s.xi_scale / a,
    })
}

/// Factor taking a transverse Einstein constant `c` to the Sasaki–Einstein
/// value `2n+2`.
pub fn sasaki_einstein_factor(c: f64, n: usize) -> f64 {
    c / (2 * n + 2) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    TransverseTransverse,
    TransverseReeb,
}

impl FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transverse-transverse" | "transverse" => Ok(Plane::TransverseTransverse),
            "transverse-reeb" | "reeb" => Ok(Plane::TransverseReeb),
            other => Err(Error::Usage(format!("unknown plane selector {other:?}"))),
        }
    }
}

/// Sectional curvature of the ambient Sasaki 3-metric at grid node `node`,
/// after D-homothety to the Sasaki–Einstein normalization.
///
/// Planes containing the Reeb field have curvature 1. A transverse plane has
/// `K = K^T − 3`, and `K^T = (2n+2)R/κ` once the transverse Einstein constant
/// is rescaled from `κ` to `2n+2`.
pub fn reconstruct_sasaki_curvature(state: &MetricState, node: usize, plane: Plane) -> Result<f64> {
    if node >= state.grid().size() {
        return Err(Error::Usage(format!(
            "node {node} out of range for grid of size {}",
            state.grid().size()
        )));
    }
    Ok(match plane {
        Plane::TransverseReeb => 1.0,
        Plane::TransverseTransverse => transverse_sectional(state.curvature()[node], state.kappa()),
    })
}

/// Sasaki transverse-plane curvature from the transverse scalar curvature `r`
/// in the `κ` normalization.
pub fn transverse_sectional(r: f64, kappa: f64) -> f64 {
    (2 * N_TRANSVERSE + 2) as f64 * r / kappa - 3.0
}
