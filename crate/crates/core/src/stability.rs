//! Spectrum of the weighted Laplacian `L = −Δ + ∇u·∇`, the condition flags,
//! decay-rate fitting and the trajectory monitors.
//!
//! Eigenvalues are reported in units of `κ`, so the Poincaré bound reads
//! `λ ≥ 1` for every model and the holomorphic sector sits at exactly 1.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::DiagnosticsRow;
use crate::geometry::MetricState;
use crate::spectral1d::Field;

pub const GAP_TOL: f64 = 5e-3;

/// Default lower bound for the `λ` proxy in the (T) flag.
pub const DELTA_T: f64 = 0.1;

/// Default threshold on `|fut|` for the (F) flag.
pub const TOL_F: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending eigenvalues on mean-zero functions, in units of `κ`.
    pub eigenvalues: Vec<f64>,
    /// Cluster representatives and their multiplicities.
    pub clusters: Vec<(f64, usize)>,
    pub nu: f64,
    pub lambda_proxy: (f64, f64),
    pub dim_hol_sector: usize,
    pub osc_u: f64,
}

/// Symmetric pencil `A v = λ B v` with `B` diagonal.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Dirichlet form `A(f,h) = ∫ ½ϕ₀ f′h′ e^{-u} dy` and mass form
/// `B(f,h) = ∫ f h e^{-u} D dy`.
pub fn assemble_l(state: &MetricState) -> Pencil {
    let grid = state.grid();
    let n = grid.size();
    let d1 = grid.diff_matrix();
    let u = state.ricci_potential();
    let phi0 = state.background().phi0();
    let mut scaled = d1.clone();
    for i in 0..n {
        let s = grid.weights()[i] * phi0[i] * (-u[i]).exp() / 2.0;
        scaled.row_mut(i).scale_mut(s);
    }
    let mut a = d1.transpose() * scaled;
    a = (&a + a.transpose()) * 0.5;
    let b = DVector::from_iterator(
        n,
        (0..n).map(|i| grid.weights()[i] * (-u[i]).exp() * state.density()[i]),
    );
    Pencil { a, b }
}

impl Pencil {
    pub fn dirichlet(&self, f: &Field, h: &Field) -> f64 {
        let fv = DVector::from_column_slice(f.values());
        let hv = DVector::from_column_slice(h.values());
        fv.dot(&(&self.a * hv))
    }

    pub fn mass(&self, f: &Field, h: &Field) -> f64 {
        f.values()
            .iter()
            .zip(h.values())
            .zip(self.b.iter())
            .map(|((a, c), b)| a * c * b)
            .sum()
    }

    pub fn rayleigh(&self, f: &Field) -> f64 {
        self.dirichlet(f, f) / self.mass(f, f)
    }
}

/// The `k` smallest eigenvalues of `L` on `B`-mean-zero functions, divided by
/// `κ`, with clustering and the derived proxies.
pub fn eigen_spectrum(state: &MetricState, k: usize) -> Result<SpectrumReport> {
    eigen_spectrum_with(state, k, GAP_TOL)
}

pub fn eigen_spectrum_with(state: &MetricState, k: usize, gap_tol: f64) -> Result<SpectrumReport> {
    let n = state.grid().size();
    if k == 0 || k > n / 4 {
        return Err(Error::Usage(format!("requested {k} eigenvalues, allowed 1..={}", n / 4)));
    }
    let pencil = assemble_l(state);
    let bmax = pencil.b.max();
    let bmin = pencil.b.min();
    let condition = bmax / bmin;
    if !(bmin > 0.0) {
        return Err(Error::Eigen {
            condition,
            reason: "mass matrix is not positive".into(),
        });
    }
    let s = pencil.b.map(|v| 1.0 / v.sqrt());
    let mut c = pencil.a.clone();
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= s[i] * s[j];
        }
    }
    // deflate the constants: v = B^{1/2} 1
    let mut v = pencil.b.map(f64::sqrt);
    v /= v.norm();
    let cv = &c * &v;
    let vcv = v.dot(&cv);
    let pc = &c - &v * cv.transpose() - &cv * v.transpose() + &v * v.transpose() * vcv;
    let pc = (&pc + pc.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(pc, 1e-14, 0).ok_or(Error::Eigen {
        condition,
        reason: "symmetric eigensolver did not converge".into(),
    })?;
    let kappa = state.kappa();
    let drop = (0..n)
        .max_by(|&i, &j| {
            let ai = eig.eigenvectors.column(i).dot(&v).abs();
            let aj = eig.eigenvectors.column(j).dot(&v).abs();
            ai.total_cmp(&aj)
        })
        .unwrap_or(0);
    let mut vals: Vec<f64> = (0..n)
        .filter(|&i| i != drop)
        .map(|i| eig.eigenvalues[i] / kappa)
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.truncate(k);
    let osc_u = state.ricci_potential().oscillation();
    Ok(report_from_eigenvalues(vals, osc_u, gap_tol))
}

/// Clustering, `ν`, the `λ` interval and the eigenvalue-1 multiplicity.
pub fn report_from_eigenvalues(eigenvalues: Vec<f64>, osc_u: f64, gap_tol: f64) -> SpectrumReport {
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &e in &eigenvalues {
        match clusters.last_mut() {
            Some(c) if e - last < gap_tol => c.1 += 1,
            _ => clusters.push((e, 1)),
        }
        last = e;
    }
    let nu = eigenvalues
        .iter()
        .copied()
        .find(|&e| e > 1.0 + gap_tol)
        .unwrap_or(f64::NAN);
    let dim_hol_sector = eigenvalues
        .iter()
        .filter(|&&e| (e - 1.0).abs() <= gap_tol)
        .count();
    let g = nu - 1.0;
    SpectrumReport {
        eigenvalues,
        clusters,
        nu,
        lambda_proxy: ((-osc_u).exp() * g, osc_u.exp() * g),
        dim_hol_sector,
        osc_u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub m_proxy: bool,
    pub f: bool,
    pub t: bool,
    pub c_proxy: bool,
}

/// Flags (M)-proxy, (F), (T) and the (C)-proxy over a sampled trajectory.
pub fn condition_flags(rows: &[DiagnosticsRow], delta_t: f64, tol_f: f64) -> Result<ConditionFlags> {
    if rows.is_empty() {
        return Err(Error::Usage("no samples".into()));
    }
    if rows.iter().any(|r| r.nu.is_nan() && r.lambda_lo.is_nan()) {
        return Err(Error::Usage("trajectory samples lack spectra".into()));
    }
    let last = rows[rows.len() - 1].mabuchi;
    let inf = rows.iter().map(|r| r.mabuchi).fold(f64::INFINITY, f64::min);
    let third = rows[(2 * rows.len()) / 3].mabuchi;
    let m_proxy = (inf - last).abs() <= 1e-8 && (third - last).abs() <= 1e-8;
    let f = rows
        .iter()
        .map(|r| r.fut.abs().max(r.fut_curvature.abs()))
        .fold(0.0, f64::max)
        < tol_f;
    let t = rows
        .iter()
        .map(|r| r.lambda_lo)
        .fold(f64::INFINITY, |m, v| if v.is_nan() { f64::NEG_INFINITY } else { m.min(v) })
        > delta_t;
    let c_proxy = rows.iter().all(|r| r.dim_hol == rows[0].dim_hol);
    Ok(ConditionFlags {
        m_proxy,
        f,
        t,
        c_proxy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares fit `log v ≈ c − b t`; returns `b` and `r²`.
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<DecayFit> {
    if series.len() < 10 {
        return Err(Error::FitUnavailable(format!("{} samples, need 10", series.len())));
    }
    if let Some(&(t, v)) = series.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::FitUnavailable(format!("nonpositive value {v} at t = {t}")));
    }
    let n = series.len() as f64;
    let mt = series.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = series.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in series {
        let dx = t - mt;
        let dy = v.ln() - ml;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::FitUnavailable("degenerate time window".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(DecayFit {
        rate: -slope,
        r2,
        samples: series.len(),
    })
}

/// Trailing half of a series, restricted to values above `max · rel_floor`
/// so that roundoff plateaus do not enter a fit.
pub fn fit_window(series: &[(f64, f64)], rel_floor: f64) -> Vec<(f64, f64)> {
    let vmax = series.iter().map(|p| p.1).fold(0.0, f64::max);
    let floor = vmax * rel_floor;
    let kept: Vec<(f64, f64)> = series.iter().copied().filter(|p| p.1 > floor).collect();
    if kept.is_empty() {
        return kept;
    }
    let t0 = kept[0].0;
    let t1 = kept[kept.len() - 1].0;
    let mid = 0.5 * (t0 + t1);
    kept.into_iter().filter(|p| p.0 >= mid).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiMonitor {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub sup_m1: f64,
    pub sup_m2: f64,
}

/// `t^{m/2} max|∇^m R| / max(√K, K)` for `m = 1, 2`, with `K` the largest
/// `|R|` on the window `(0, min(1, t_end)]`. Beyond `t = 1` the time factor is
/// frozen at 1.
pub fn shi_monitor(rows: &[DiagnosticsRow]) -> ShiMonitor {
    let t_end = rows.last().map(|r| r.t).unwrap_or(0.0);
    let horizon = t_end.min(1.0);
    let window = |r: &&DiagnosticsRow| r.t > 0.0 && r.t <= horizon;
    let k = rows.iter().filter(window).map(|r| r.r_abs_max).fold(0.0, f64::max);
    let norm = k.sqrt().max(k);
    let scale = |v: f64| if norm > 0.0 { v / norm } else { 0.0 };
    let m1: Vec<f64> = rows
        .iter()
        .map(|r| scale(r.t.min(1.0).sqrt() * r.grad_r_max))
        .collect();
    let m2: Vec<f64> = rows.iter().map(|r| scale(r.t.min(1.0) * r.hess_r_max)).collect();
    let sup = |v: &[f64]| {
        rows.iter()
            .zip(v)
            .filter(|(r, _)| window(r))
            .map(|(_, &x)| x)
            .fold(0.0, f64::max)
    };
    ShiMonitor {
        sup_m1: sup(&m1),
        sup_m2: sup(&m2),
        m1,
        m2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceMonitor {
    /// Running `Σ max_y |Δ log D|` over consecutive samples.
    pub integral: Vec<f64>,
    /// `max over (s,t) of max_y D_t/D_s`.
    pub ratio: f64,
}

pub fn equivalence_monitor(densities: &[Field]) -> Result<EquivalenceMonitor> {
    if densities.len() < 2 {
        return Err(Error::Usage("equivalence monitor needs two samples".into()));
    }
    let n = densities[0].len();
    let mut integral = vec![0.0; densities.len()];
    for i in 1..densities.len() {
        let step = (0..n)
            .map(|j| (densities[i][j].ln() - densities[i - 1][j].ln()).abs())
            .fold(0.0, f64::max);
        integral[i] = integral[i - 1] + step;
    }
    let mut ratio: f64 = 1.0;
    for j in 0..n {
        let hi = densities.iter().map(|d| d[j]).fold(f64::NEG_INFINITY, f64::max);
        let lo = densities.iter().map(|d| d[j]).fold(f64::INFINITY, f64::min);
        ratio = ratio.max(hi / lo);
    }
    Ok(EquivalenceMonitor { integral, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{validate_state, BackgroundGeometry, GeometryConfig};

    #[test]
    fn round_spectrum() {
        let b = BackgroundGeometry::new(GeometryConfig::regular(128)).unwrap().shared();
        let s = validate_state(&Field::zeros(128), &b).unwrap();
        let rep = eigen_spectrum(&s, 6).unwrap();
        for (l, e) in (1..=6).zip(&rep.eigenvalues) {
            let want = (l * (l + 1)) as f64 / 2.0;
            assert!((e - want).abs() < 1e-6, "l={l} e={e}");
        }
        assert_eq!(rep.dim_hol_sector, 1);
        assert!((rep.nu - 3.0).abs() < 1e-6);
        assert!((rep.lambda_proxy.0 - 2.0).abs() < 1e-6);
        assert!((rep.lambda_proxy.1 - 2.0).abs() < 1e-6);
        assert!(eigen_spectrum(&s, 33).is_err());
    }

    #[test]
    fn pencil_symmetry_and_rayleigh() {
        let b = BackgroundGeometry::new(GeometryConfig::regular(64)).unwrap().shared();
        let s = validate_state(&Field::zeros(64), &b).unwrap();
        let p = assemble_l(&s);
        assert!((&p.a - p.a.transpose()).amax() < 1e-14);
        let x = b.grid().sample(|x| x);
        assert!((p.rayleigh(&x) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn fit_exponential() {
        let series: Vec<(f64, f64)> = (0..40).map(|i| {
            let t = i as f64 * 0.25;
            (t, 3.0 * (-2.0 * t).exp())
        }).collect();
        let fit = fit_decay_rate(&series).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit_decay_rate(&series[..5]).is_err());
        let mut bad = series.clone();
        bad[3].1 = 0.0;
        assert!(matches!(fit_decay_rate(&bad), Err(Error::FitUnavailable(_))));
    }

    #[test]
    fn clustering() {
        let rep = report_from_eigenvalues(vec![0.999, 1.001, 2.5, 2.501, 4.0], 0.5, 5e-3);
        assert_eq!(rep.clusters.len(), 3);
        assert_eq!(rep.clusters[0].1, 2);
        assert_eq!(rep.dim_hol_sector, 2);
        assert_eq!(rep.nu, 2.5);
        assert!(rep.lambda_proxy.0 <= 1.5 && 1.5 <= rep.lambda_proxy.1);
    }

    #[test]
    fn equivalence_trivial() {
        let d = vec![Field::constant(8, 1.0); 3];
        let m = equivalence_monitor(&d).unwrap();
        assert_eq!(m.ratio, 1.0);
        assert_eq!(*m.integral.last().unwrap(), 0.0);
    }
}
