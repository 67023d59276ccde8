//! Newton path-following for the one-parameter Monge–Ampère family
//!
//! `log(D_ψ / D_ref) + tκψ + L(ψ) = h`,   `h = −u_ref`,
//!
//! where `D_ψ` is the density of `φ_ref + ψ` and `L` is the linear-path
//! functional relative to the reference. The reference Ricci potential is
//! normalized by `∫e^{−u_ref} dm_ref = Vol`, which is exactly `∫(e^h − 1) dm_ref = 0`.
//! At `t = 1` the total potential is Einstein.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{energy_functionals, l_functional, EnergyReport};
use crate::geometry::{MetricState, EPS_POS};
use crate::spectral1d::Field;
use crate::VOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Acceptance threshold on the max-norm residual.
    pub tol: f64,
    /// Smallest backtracking factor before a step counts as failed.
    pub damping_floor: f64,
    /// Singular values below `rcond·σ_max` are dropped from the Newton solve.
    pub rcond: f64,
    /// Gauss points for the path energies.
    pub energy_steps: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 60,
            tol: 1e-10,
            damping_floor: 2f64.powi(-20),
            rcond: 1e-11,
            energy_steps: 32,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iter > 0
            && self.tol > 0.0
            && self.damping_floor > 0.0
            && self.damping_floor < 1.0
            && self.rcond > 0.0
            && self.energy_steps >= 16;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid newton settings {self:?}")))
        }
    }
}

/// 32 uniform points on `[0, 1]` with three extra points packed against 1.
pub fn default_t_grid() -> Vec<f64> {
    let m = 31;
    let mut ts: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let h = 1.0 / m as f64;
    for k in 1..=3 {
        ts.push(1.0 - h / 2f64.powi(k));
    }
    ts.sort_by(f64::total_cmp);
    ts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    /// Full nodal correction `ψ_t`, constant mode included.
    pub psi: Vec<f64>,
    pub energy: EnergyReport,
    pub iterations: usize,
    /// Max-norm residual before each Newton step and after the last one.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ContinuityPath {
    pub reference: MetricState,
    pub points: Vec<PathPoint>,
}

impl ContinuityPath {
    pub fn t_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn psi(&self, i: usize) -> Field {
        Field::new(self.points[i].psi.clone())
    }

    /// `φ_ref + ψ_t` at path point `i`.
    pub fn total_potential(&self, i: usize) -> Field {
        self.reference.phi().zip_map(&self.psi(i), |a, b| a + b)
    }

    pub fn state(&self, i: usize) -> Result<MetricState> {
        MetricState::from_parts(
            self.reference.background_arc().clone(),
            self.total_potential(i),
            0.0,
            self.points[i].t,
            EPS_POS,
        )
    }
}

struct Equation<'a> {
    reference: &'a MetricState,
    h: Field,
    d_ref: &'a Field,
    log_d_ref: &'a Field,
}

struct Iterate {
    state: MetricState,
    residual: Field,
}

impl<'a> Equation<'a> {
    fn new(reference: &'a MetricState) -> Self {
        Self {
            reference,
            h: reference.ricci_potential().scaled(-1.0),
            d_ref: reference.density(),
            log_d_ref: reference.log_density(),
        }
    }

    fn evaluate(&self, psi: &Field, t: f64) -> Result<Iterate> {
        let bg = self.reference.background_arc();
        let total = self.reference.phi().zip_map(psi, |a, b| a + b);
        let state = MetricState::from_parts(Arc::clone(bg), total, 0.0, t, EPS_POS)?;
        let d = state.density();
        let lap_psi = d.zip_map(self.d_ref, |a, b| a - b);
        let l = l_functional(psi, self.d_ref, bg.grid(), &lap_psi);
        let kappa = bg.kappa();
        let residual = Field::new(
            (0..psi.len())
                .map(|i| state.log_density()[i] - self.log_d_ref[i] + t * kappa * psi[i] + l - self.h[i])
                .collect(),
        );
        Ok(Iterate { state, residual })
    }

    /// `diag(1/D)Δ₀ + tκI + 1·(w∘D / Vol)ᵀ`.
    fn jacobian(&self, it: &Iterate, t: f64) -> DMatrix<f64> {
        let bg = self.reference.background();
        let lap = bg.lap0_matrix();
        let d = it.state.density();
        let w = bg.grid().weights();
        let n = d.len();
        let kappa = bg.kappa();
        DMatrix::from_fn(n, n, |i, j| {
            let mut v = lap[(i, j)] / d[i] + w[j] * d[j] / VOL;
            if i == j {
                v += t * kappa;
            }
            v
        })
    }
}

/// Damped Newton at a single `t`, seeded with `seed`.
fn solve_point(eq: &Equation, seed: &Field, t: f64, cfg: &NewtonConfig) -> Result<(Field, Vec<f64>)> {
    let diverged = |residual: f64| Error::NewtonDivergence {
        t,
        last_good_t: f64::NAN,
        residual,
    };
    let mut psi = seed.clone();
    let mut it = match eq.evaluate(&psi, t) {
        Ok(it) => it,
        Err(Error::Inadmissible { .. }) => return Err(diverged(f64::INFINITY)),
        Err(e) => return Err(e),
    };
    let mut norm = it.residual.max_abs();
    let mut history = vec![norm];
    for _ in 0..cfg.max_iter {
        if norm < cfg.tol {
            return Ok((psi, history));
        }
        let jac = eq.jacobian(&it, t);
        let svd = jac.svd(true, true);
        let cutoff = cfg.rcond * svd.singular_values.max();
        let rhs = DVector::from_iterator(psi.len(), it.residual.values().iter().map(|r| -r));
        let delta = svd
            .solve(&rhs, cutoff)
            .map_err(|e| Error::Numeric(format!("newton solve failed: {e}")))?;
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = Field::new((0..psi.len()).map(|i| psi[i] + alpha * delta[i]).collect());
            match eq.evaluate(&trial, t) {
                Ok(next) if next.residual.max_abs() < norm => break Some((trial, next)),
                Ok(_) | Err(Error::Inadmissible { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha /= 2.0;
            if alpha < cfg.damping_floor {
                break None;
            }
        };
        match accepted {
            Some((trial, next)) => {
                psi = trial;
                it = next;
                norm = it.residual.max_abs();
                history.push(norm);
            }
            None => return Err(diverged(norm)),
        }
    }
    if norm < cfg.tol {
        Ok((psi, history))
    } else {
        Err(diverged(norm))
    }
}

/// Solves the family along `t_grid`, warm-starting each point from the last.
pub fn solve_path(reference: &MetricState, t_grid: &[f64], cfg: &NewtonConfig) -> Result<ContinuityPath> {
    cfg.validate()?;
    if t_grid.first() != Some(&0.0) {
        return Err(Error::Usage("t grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Usage("t grid must increase within [0, 1]".into()));
    }
    let eq = Equation::new(reference);
    let mut seed = Field::zeros(reference.background().size());
    let mut points = Vec::with_capacity(t_grid.len());
    let mut last_good = f64::NAN;
    for &t in t_grid {
        let (psi, residuals) = solve_point(&eq, &seed, t, cfg).map_err(|e| match e {
            Error::NewtonDivergence { t, residual, .. } => Error::NewtonDivergence {
                t,
                last_good_t: last_good,
                residual,
            },
            other => other,
        })?;
        let energy = energy_functionals(&psi, reference, cfg.energy_steps)?;
        points.push(PathPoint {
            t,
            psi: psi.values().to_vec(),
            energy,
            iterations: residuals.len() - 1,
            residuals,
        });
        last_good = t;
        seed = psi;
    }
    Ok(ContinuityPath {
        reference: reference.clone(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// `(t, increase)` wherever `M` grows by more than the slack.
    pub m_violations: Vec<(f64, f64)>,
    /// `(t, decrease)` wherever `I − J` drops by more than the slack.
    pub ij_violations: Vec<(f64, f64)>,
    pub max_m_increase: f64,
    pub max_ij_decrease: f64,
    pub slack: f64,
}

impl MonotonicityReport {
    pub fn holds(&self) -> bool {
        self.m_violations.is_empty() && self.ij_violations.is_empty()
    }
}

pub const MONOTONICITY_SLACK: f64 = 1e-8;

/// Checks that `M` is non-increasing and `I − J` non-decreasing along the path.
pub fn path_monotonicity(path: &ContinuityPath) -> Result<MonotonicityReport> {
    if path.points.len() < 5 {
        return Err(Error::Usage(format!(
            "monotonicity needs at least 5 path points, got {}",
            path.points.len()
        )));
    }
    let slack = MONOTONICITY_SLACK;
    let mut report = MonotonicityReport {
        m_violations: Vec::new(),
        ij_violations: Vec::new(),
        max_m_increase: 0.0,
        max_ij_decrease: 0.0,
        slack,
    };
    for pair in path.points.windows(2) {
        let (a, b) = (&pair[0].energy, &pair[1].energy);
        let dm = b.m - a.m;
        let dij = (b.i - b.j) - (a.i - a.j);
        report.max_m_increase = report.max_m_increase.max(dm);
        report.max_ij_decrease = report.max_ij_decrease.max(-dij);
        if dm > slack {
            report.m_violations.push((pair[1].t, dm));
        }
        if -dij > slack {
            report.ij_violations.push((pair[1].t, -dij));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{validate_state, BackgroundGeometry, GeometryConfig};

    fn bg(n: usize) -> Arc<BackgroundGeometry> {
        BackgroundGeometry::new(GeometryConfig::regular(n)).unwrap().shared()
    }

    #[test]
    fn default_grid_shape() {
        let ts = default_t_grid();
        assert_eq!(ts.len(), 35);
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 1.0);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn round_reference_is_a_fixed_point() {
        let b = bg(32);
        let reference = validate_state(&Field::zeros(32), &b).unwrap();
        let path = solve_path(&reference, &[0.0, 0.25, 0.5, 0.75, 1.0], &NewtonConfig::default()).unwrap();
        for p in &path.points {
            assert!(p.psi.iter().all(|v| v.abs() < 1e-12));
            assert_eq!(p.iterations, 0);
        }
        let mono = path_monotonicity(&path).unwrap();
        assert!(mono.holds());
        assert!(mono.max_m_increase.abs() < 1e-14);
    }

    #[test]
    fn start_point_has_zero_l() {
        let b = bg(48);
        let phi = b.grid().sample(|x| 0.2 * (1.5 * x * x - 0.5));
        let reference = validate_state(&phi, &b).unwrap();
        let path = solve_path(&reference, &[0.0], &NewtonConfig::default()).unwrap();
        assert!(path.points[0].energy.l.abs() < 1e-8);
    }

    #[test]
    fn bad_grids_rejected() {
        let b = bg(16);
        let reference = validate_state(&Field::zeros(16), &b).unwrap();
        let cfg = NewtonConfig::default();
        assert!(matches!(solve_path(&reference, &[0.1, 0.2], &cfg), Err(Error::Usage(_))));
        assert!(matches!(solve_path(&reference, &[0.0, 0.5, 0.4], &cfg), Err(Error::Usage(_))));
        let short = solve_path(&reference, &[0.0, 1.0], &cfg).unwrap();
        assert!(path_monotonicity(&short).is_err());
    }
}
