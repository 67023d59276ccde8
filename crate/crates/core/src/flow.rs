//! Time integration of the reduced parabolic Monge–Ampère equation
//! `φ̇ = log D + κφ − F`.
//!
//! The potential is advanced as a mean-free shape `ψ` and a scalar offset `m`.
//! The shape obeys `ψ̇ = G − ℓ(G)` with `G = log D + κψ − F` (plus an optional
//! automorphism term), and the offset obeys the linear ODE `ṁ = κm + ℓ(G)`,
//! which is integrated exactly for piecewise-linear forcing.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{self, DiagnosticsRow};
use crate::geometry::{BackgroundGeometry, MetricState, EPS_POS};
use crate::spectral1d::Field;
use crate::stability::{self, DecayFit};
use crate::VOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Two-stage Rosenbrock-W method with the frozen linearization treated implicitly.
    Imex,
    /// Heun's method with an embedded Euler estimate.
    ExplicitRk,
}

/// How the holomorphic automorphism mode is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// The plain flow.
    Free,
    /// Adds `β(t)h_t` to the velocity so that the first moment `∫yD dy` is
    /// held fixed. This pulls the flow back by automorphisms and leaves every
    /// diffeomorphism-invariant quantity unchanged.
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Fixed steps of `dt_max` (clipped at sample times) when false.
    pub adaptive: bool,
    /// Largest spacing between diagnostic samples.
    pub sample_every: f64,
    /// First sample spacing; spacings grow geometrically up to `sample_every`.
    pub sample_start: f64,
    pub sample_growth: f64,
    pub scheme: Scheme,
    pub gauge: Gauge,
    pub eps_pos: f64,
    /// Eigenvalues computed per sample.
    pub spectrum_k: usize,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub converged_y: f64,
    pub floor_y: f64,
    pub r2_min: f64,
    pub flat_slope: f64,
    /// Values below `max · noise_floor` are excluded from rate fits.
    pub noise_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            converged_y: 1e-10,
            floor_y: 1e-6,
            r2_min: 0.99,
            flat_slope: 1e-3,
            noise_floor: 1e-18,
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            dt_init: 1e-4,
            dt_min: 1e-10,
            dt_max: 0.02,
            rtol: 1e-6,
            atol: 1e-12,
            adaptive: true,
            sample_every: 0.02,
            sample_start: 1e-5,
            sample_growth: 1.05,
            scheme: Scheme::Imex,
            gauge: Gauge::Free,
            eps_pos: EPS_POS,
            spectrum_k: 8,
            thresholds: Thresholds::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(0.0 < self.dt_min && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad("need 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.rtol > 0.0) || !(self.atol >= 0.0) {
            return bad("rtol must be positive and atol nonnegative");
        }
        if !(self.sample_every > 0.0 && self.sample_start > 0.0 && self.sample_start <= self.sample_every) {
            return bad("need 0 < sample_start <= sample_every");
        }
        if !(self.sample_growth >= 1.0) {
            return bad("sample_growth must be at least 1");
        }
        if !(self.eps_pos > 0.0) {
            return bad("eps_pos must be positive");
        }
        if self.spectrum_k == 0 {
            return bad("spectrum_k must be positive");
        }
        Ok(())
    }

    /// The same run sampled at half the spacing everywhere.
    pub fn halved_cadence(&self) -> Self {
        let mut c = self.clone();
        c.sample_every /= 2.0;
        c.sample_start /= 2.0;
        c.sample_growth = 1.0 + (self.sample_growth - 1.0) / 2.0;
        c.dt_max = (self.dt_max / 2.0).max(c.dt_init);
        c
    }
}

/// Sample times `0 = t₀ < t₁ < … = t_end` with spacings growing from
/// `sample_start` by `sample_growth` up to `sample_every`.
pub fn sample_times(cfg: &FlowConfig) -> Vec<f64> {
    let mut ts = vec![0.0];
    let mut h = cfg.sample_start;
    let mut k = 0u64;
    let mut t = 0.0;
    // spacings are accumulated from an integer schedule to keep runs reproducible
    loop {
        t += h;
        k += 1;
        // a sliver at the end is merged into the last interval
        if t >= cfg.t_end - 0.5 * h {
            ts.push(cfg.t_end);
            break;
        }
        ts.push(t);
        h = (cfg.sample_start * cfg.sample_growth.powi(k as i32)).min(cfg.sample_every);
    }
    ts
}

/// Velocity of the potential at a shape `ψ`.
#[derive(Debug, Clone)]
pub struct Velocity {
    /// `G − ℓ(G)`.
    pub shape_rate: Field,
    /// `ℓ(G)`, the forcing of the offset.
    pub g: f64,
    pub beta: f64,
    pub density: Field,
}

/// `G(ψ) = log D + κψ − F + βh` split into its mean-free part and mean.
pub fn velocity(bg: &BackgroundGeometry, psi: &Field, gauge: Gauge, eps_pos: f64) -> Result<Velocity> {
    let grid = bg.grid();
    let n = bg.size();
    let lap = bg.lap0(psi);
    let d = lap.shifted(1.0);
    if let Some(i) = (0..n).find(|&i| !(d[i] > eps_pos)) {
        return Err(Error::Inadmissible {
            y: grid.nodes()[i],
            value: d[i],
        });
    }
    let kappa = bg.kappa();
    let mut big_g = Field::new((0..n).map(|i| d[i].ln() + kappa * psi[i] - bg.f()[i]).collect());
    let mut beta = 0.0;
    if gauge == Gauge::Pinned {
        let pp = grid.differentiate_slice(psi.values());
        let y = grid.nodes();
        let h = Field::new((0..n).map(|i| y[i] + 0.5 * bg.phi0()[i] * pp[i]).collect());
        let lg = bg.lap0(&big_g);
        let lh = bg.lap0(&h);
        let w = grid.weights();
        let num: f64 = (0..n).map(|i| w[i] * y[i] * lg[i]).sum();
        let den: f64 = (0..n).map(|i| w[i] * y[i] * lh[i]).sum();
        beta = -num / den;
        big_g = big_g.zip_map(&h, |a, b| a + beta * b);
    }
    let g = grid.integrate_slice(big_g.values()) / VOL;
    Ok(Velocity {
        shape_rate: big_g.shifted(-g),
        g,
        beta,
        density: d,
    })
}

fn remove_mean(f: &mut Field, bg: &BackgroundGeometry) {
    let m = bg.grid().integrate_slice(f.values()) / VOL;
    for v in f.values_mut() {
        *v -= m;
    }
}

/// Exact update of `ṁ = κm + g(t)` over `[0, h]` with `g` linear between `g0`
/// and `g1`.
pub fn offset_update(m: f64, g0: f64, g1: f64, kappa: f64, h: f64) -> f64 {
    let z = kappa * h;
    let e = z.exp();
    let (e1, e2) = if z.abs() < 1e-5 {
        (h * (1.0 + z / 2.0 + z * z / 6.0), h * h * (0.5 + z / 6.0 + z * z / 24.0))
    } else {
        ((e - 1.0) / kappa, (e - 1.0 - z) / (kappa * kappa))
    };
    e * m + g0 * e1 + (g1 - g0) * e2 / h
}

/// `∫₀^h e^{−κσ} g(σ) dσ` for `g` linear between `g0` and `g1`.
fn discounted_integral(g0: f64, g1: f64, kappa: f64, h: f64) -> f64 {
    let z = kappa * h;
    let (i0, i1) = if z.abs() < 1e-5 {
        // ∫e^{−κσ}, ∫σe^{−κσ}/h
        (h * (1.0 - z / 2.0 + z * z / 6.0), h * (0.5 - z / 3.0 + z * z / 8.0))
    } else {
        let e = (-z).exp();
        ((1.0 - e) / kappa, (1.0 - e * (1.0 + z)) / (kappa * kappa * h))
    };
    g0 * i0 + (g1 - g0) * i1
}

#[derive(Debug, Clone, Copy)]
struct StepOutcome {
    err: f64,
}

struct Integrator<'a> {
    bg: &'a BackgroundGeometry,
    cfg: &'a FlowConfig,
}

impl<'a> Integrator<'a> {
    fn vel(&self, psi: &Field) -> Result<Velocity> {
        velocity(self.bg, psi, self.cfg.gauge, self.cfg.eps_pos)
    }

    /// One attempted step from `psi` with velocity `v0`; returns the new shape
    /// and the error estimate.
    fn attempt(&self, psi: &Field, v0: &Velocity, dt: f64) -> Result<(Field, StepOutcome)> {
        let n = psi.len();
        match self.cfg.scheme {
            Scheme::Imex => {
                let gamma = 1.0 + std::f64::consts::FRAC_1_SQRT_2;
                let kappa = self.bg.kappa();
                // J = P(Δ₀/D + κ) with P removing the grid mean, so stages stay mean-free
                let lap = self.bg.lap0_matrix();
                let mut jac = DMatrix::<f64>::zeros(n, n);
                for i in 0..n {
                    let s = 1.0 / v0.density[i];
                    for j in 0..n {
                        jac[(i, j)] = s * lap[(i, j)];
                    }
                    jac[(i, i)] += kappa;
                }
                let w = self.bg.grid().weights();
                let mut mean_row = vec![0.0; n];
                for i in 0..n {
                    for (j, mr) in mean_row.iter_mut().enumerate() {
                        *mr += w[i] * jac[(i, j)] / VOL;
                    }
                }
                let mut m = DMatrix::<f64>::identity(n, n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] -= gamma * dt * (jac[(i, j)] - mean_row[j]);
                    }
                }
                let lu = m.lu();
                let solve = |rhs: &Field| -> Result<Field> {
                    let x = lu
                        .solve(&DVector::from_column_slice(rhs.values()))
                        .ok_or_else(|| Error::StiffFailure {
                            t: f64::NAN,
                            dt,
                            reason: "singular stage matrix".into(),
                        })?;
                    Ok(Field::new(x.as_slice().to_vec()))
                };
                let k1 = solve(&v0.shape_rate)?;
                let stage = psi.zip_map(&k1, |p, k| p + dt * k);
                let v1 = self.vel(&stage)?;
                let k2 = solve(&v1.shape_rate.zip_map(&k1, |f, k| f - 2.0 * k))?;
                let mut next = Field::new(
                    (0..n)
                        .map(|i| psi[i] + 1.5 * dt * k1[i] + 0.5 * dt * k2[i])
                        .collect(),
                );
                remove_mean(&mut next, self.bg);
                // filtered through the stage matrix so slaved stiff modes do not count as error
                let raw = Field::new((0..n).map(|i| 0.5 * dt * (k1[i] + k2[i])).collect());
                let err = solve(&raw)?;
                Ok((next.clone(), StepOutcome { err: self.err_norm(&err, psi, &next) }))
            }
            Scheme::ExplicitRk => {
                let k1 = &v0.shape_rate;
                let stage = psi.zip_map(k1, |p, k| p + dt * k);
                let v1 = self.vel(&stage)?;
                let k2 = &v1.shape_rate;
                let mut next = Field::new((0..n).map(|i| psi[i] + 0.5 * dt * (k1[i] + k2[i])).collect());
                remove_mean(&mut next, self.bg);
                let err = Field::new((0..n).map(|i| 0.5 * dt * (k2[i] - k1[i])).collect());
                Ok((next.clone(), StepOutcome { err: self.err_norm(&err, psi, &next) }))
            }
        }
    }

    /// Max-norm error relative to the size of the whole field, so that nodes
    /// where `ψ` crosses zero do not dictate the step.
    fn err_norm(&self, err: &Field, a: &Field, b: &Field) -> f64 {
        let scale = a.max_abs().max(b.max_abs());
        err.max_abs() / (self.cfg.atol + self.cfg.rtol * scale)
    }
}

/// Advances a state by exactly `dt`. A step that leaves the admissible set is
/// replaced by two half steps, recursively, down to `dt_min`.
pub fn step(state: &MetricState, dt: f64, cfg: &FlowConfig) -> Result<MetricState> {
    let bg = state.background_arc().clone();
    let integ = Integrator { bg: &bg, cfg };
    let (psi, m) = advance_exact(&integ, state.psi(), state.offset(), state.t(), dt)?;
    MetricState::from_parts(bg.clone(), psi, m, state.t() + dt, cfg.eps_pos)
}

fn advance_exact(integ: &Integrator, psi: &Field, m: f64, t: f64, dt: f64) -> Result<(Field, f64)> {
    let attempt = || -> Result<(Field, f64)> {
        let v0 = integ.vel(psi)?;
        let (next, _) = integ.attempt(psi, &v0, dt)?;
        let v1 = integ.vel(&next)?;
        let m1 = offset_update(m, v0.g, v1.g, integ.bg.kappa(), dt);
        Ok((next, m1))
    };
    match attempt() {
        Ok(r) => Ok(r),
        Err(Error::Inadmissible { .. }) if dt / 2.0 >= integ.cfg.dt_min => {
            let (p, mm) = advance_exact(integ, psi, m, t, dt / 2.0)?;
            advance_exact(integ, &p, mm, t + dt / 2.0, dt / 2.0)
        }
        Err(Error::Inadmissible { y, value }) => Err(Error::StiffFailure {
            t,
            dt,
            reason: format!("density {value:.3e} at y = {y:.4} below the floor"),
        }),
        Err(e) => Err(e),
    }
}

/// Potential at a sample time, with the velocity data needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Mean-free shape of `φ`.
    pub psi: Vec<f64>,
    /// Grid mean of `φ`.
    pub offset: f64,
    pub beta: f64,
    /// `ℓ(G)` at this sample.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Converged {
        #[serde(with = "extended_float")]
        rate: f64,
    },
    SolitonFloor {
        level: f64,
    },
    Undecided,
}

impl Verdict {
    pub fn is_converged(&self) -> bool {
        matches!(self, Verdict::Converged { .. })
    }

    pub fn is_soliton_floor(&self) -> bool {
        matches!(self, Verdict::SolitonFloor { .. })
    }
}

/// Serializes infinities as the strings `"+inf"`/`"-inf"`.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "+inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "+inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad number {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub halvings: usize,
    pub dt_smallest: f64,
    pub dt_largest: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub bg: Arc<BackgroundGeometry>,
    pub config: FlowConfig,
    pub samples: Vec<Sample>,
    pub rows: Vec<DiagnosticsRow>,
    pub verdict: Verdict,
    pub stats: StepStats,
    pub equivalence_ratio: f64,
    pub shi_sup: (f64, f64),
}

impl Trajectory {
    pub fn state(&self, i: usize) -> Result<MetricState> {
        let s = &self.samples[i];
        MetricState::from_parts(
            self.bg.clone(),
            Field::new(s.psi.clone()),
            s.offset,
            s.t,
            self.config.eps_pos,
        )
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> Result<MetricState> {
        self.state(self.samples.len() - 1)
    }

    pub fn series(&self, f: impl Fn(&DiagnosticsRow) -> f64) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t, f(r))).collect()
    }
}

/// Integrates from `phi0` to `t_end`, sampling diagnostics on the graded grid.
pub fn run(phi0: &Field, bg: &Arc<BackgroundGeometry>, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if phi0.len() != bg.size() {
        return Err(Error::GridMismatch {
            expected: bg.size(),
            found: phi0.len(),
        });
    }
    let init = MetricState::from_parts(bg.clone(), phi0.clone(), 0.0, 0.0, cfg.eps_pos)?;
    let integ = Integrator { bg, cfg };
    let kappa = bg.kappa();
    let times = sample_times(cfg);

    let mut psi = init.psi().clone();
    let mut m = init.offset();
    let mut t = 0.0;
    let mut v = integ.vel(&psi)?;
    let mut samples = vec![Sample {
        t: 0.0,
        psi: psi.values().to_vec(),
        offset: m,
        beta: v.beta,
        g: v.g,
    }];
    let mut stats = StepStats {
        dt_smallest: f64::INFINITY,
        ..Default::default()
    };
    let mut dt = cfg.dt_init;
    for (k, &t_next) in times.iter().enumerate().skip(1) {
        // tolerance tightens with the sample spacing so finite differences in time stay accurate
        let tighten = ((t_next - times[k - 1]) / cfg.sample_every).min(1.0);
        while t < t_next {
            let remaining = t_next - t;
            let mut h = if cfg.adaptive { dt.min(cfg.dt_max) } else { cfg.dt_max };
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            match integ.attempt(&psi, &v, h).map(|(p, o)| (p, o.err / tighten)) {
                Ok((next, err)) if !cfg.adaptive || err <= 1.0 => {
                    let v1 = match integ.vel(&next) {
                        Ok(v1) => v1,
                        Err(Error::Inadmissible { .. }) => {
                            stats.halvings += 1;
                            dt = shrink(h, cfg, t)?;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    m = offset_update(m, v.g, v1.g, kappa, h);
                    psi = next;
                    v = v1;
                    t = if last { t_next } else { t + h };
                    stats.accepted += 1;
                    stats.dt_smallest = stats.dt_smallest.min(h);
                    stats.dt_largest = stats.dt_largest.max(h);
                    if cfg.adaptive {
                        let fac = if err > 0.0 { 0.9 * err.powf(-0.5) } else { 2.0 };
                        let grown = h * fac.clamp(0.2, 2.0);
                        // a clipped final step says nothing about the attainable size
                        dt = if last { dt.max(grown) } else { grown };
                        dt = dt.clamp(cfg.dt_min, cfg.dt_max);
                    }
                }
                Ok((_, err)) => {
                    stats.rejected += 1;
                    let fac = (0.9 * err.powf(-0.5)).clamp(0.2, 0.9);
                    dt = h * fac;
                    if dt < cfg.dt_min {
                        return Err(Error::StiffFailure {
                            t,
                            dt,
                            reason: format!("error estimate {err:.3e} not met at dt_min"),
                        });
                    }
                }
                Err(Error::Inadmissible { .. }) => {
                    stats.halvings += 1;
                    dt = shrink(h, cfg, t)?;
                }
                Err(e) => return Err(e),
            }
        }
        samples.push(Sample {
            t: t_next,
            psi: psi.values().to_vec(),
            offset: m,
            beta: v.beta,
            g: v.g,
        });
    }
    if stats.accepted == 0 {
        stats.dt_smallest = 0.0;
    }
    finish(bg.clone(), cfg.clone(), samples, stats)
}

fn shrink(h: f64, cfg: &FlowConfig, t: f64) -> Result<f64> {
    let dt = h / 2.0;
    if dt < cfg.dt_min {
        return Err(Error::StiffFailure {
            t,
            dt,
            reason: "admissibility lost at dt_min".into(),
        });
    }
    Ok(dt)
}

/// Computes diagnostics, monitors and the verdict for a list of samples.
pub fn finish(
    bg: Arc<BackgroundGeometry>,
    config: FlowConfig,
    samples: Vec<Sample>,
    stats: StepStats,
) -> Result<Trajectory> {
    let k = config.spectrum_k.min(bg.size() / 4).max(1);
    let computed: Vec<Result<(DiagnosticsRow, Field)>> = samples
        .par_iter()
        .map(|s| {
            let st = MetricState::from_parts(
                bg.clone(),
                Field::new(s.psi.clone()),
                s.offset,
                s.t,
                config.eps_pos,
            )?;
            let spec = stability::eigen_spectrum(&st, k)?;
            Ok((functionals::state_row(&st, Some(&spec)), st.density().clone()))
        })
        .collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut densities = Vec::with_capacity(samples.len());
    for c in computed {
        let (r, d) = c?;
        rows.push(r);
        densities.push(d);
    }
    for i in 1..rows.len() {
        let prev = rows[i - 1].mabuchi;
        let dtt = rows[i].t - rows[i - 1].t;
        rows[i].mabuchi = prev - 0.5 * dtt * (rows[i].y + rows[i - 1].y);
    }
    let shi = stability::shi_monitor(&rows);
    for (i, r) in rows.iter_mut().enumerate() {
        r.shi_m1 = shi.m1[i];
        r.shi_m2 = shi.m2[i];
    }
    let equivalence_ratio = if densities.len() >= 2 {
        let eq = stability::equivalence_monitor(&densities)?;
        for (r, v) in rows.iter_mut().zip(&eq.integral) {
            r.equiv_int = *v;
        }
        eq.ratio
    } else {
        1.0
    };
    let verdict = if rows.len() >= 20 {
        detect_limit(&rows, &config.thresholds)?
    } else {
        Verdict::Undecided
    };
    Ok(Trajectory {
        bg,
        config,
        samples,
        rows,
        verdict,
        stats,
        equivalence_ratio,
        shi_sup: (shi.sup_m1, shi.sup_m2),
    })
}

/// Fit of `Y` over the trailing window above the noise floor.
pub fn y_decay_fit(rows: &[DiagnosticsRow], th: &Thresholds) -> Result<DecayFit> {
    let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.y)).collect();
    stability::fit_decay_rate(&stability::fit_window(&series, th.noise_floor))
}

/// Classifies a trajectory from its `Y` series.
pub fn detect_limit(rows: &[DiagnosticsRow], th: &Thresholds) -> Result<Verdict> {
    if rows.len() < 20 {
        return Err(Error::Usage(format!("{} samples, need 20", rows.len())));
    }
    let y_end = rows[rows.len() - 1].y;
    let y_max = rows.iter().map(|r| r.y).fold(0.0, f64::max);
    if y_max < 1e-20 {
        return Ok(Verdict::Converged { rate: f64::INFINITY });
    }
    if let Ok(fit) = y_decay_fit(rows, th) {
        if fit.r2 > th.r2_min && y_end < th.converged_y {
            return Ok(Verdict::Converged { rate: fit.rate });
        }
    }
    let t_end = rows[rows.len() - 1].t;
    let tail: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t >= 0.5 * t_end)
        .map(|r| (r.t, r.y))
        .collect();
    if y_end > th.floor_y {
        if let Ok(fit) = stability::fit_decay_rate(&tail) {
            if fit.rate.abs() < th.flat_slope {
                return Ok(Verdict::SolitonFloor { level: y_end });
            }
        }
    }
    Ok(Verdict::Undecided)
}

/// Trajectory with the initial constant chosen so that `φ̇` stays bounded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Renormalized {
    /// `dm₀`-mean of the renormalized initial potential, from the integral formula.
    pub c0: f64,
    /// The same quantity from the backward offset recursion.
    pub c0_backward: f64,
    /// Renormalized grid-mean offsets per sample.
    pub offsets: Vec<f64>,
    /// `sup_t ‖φ̇̃‖∞`.
    pub sup_velocity: f64,
    pub tail_rate: f64,
}

impl Renormalized {
    /// Renormalized potential at sample `i`.
    pub fn phi(&self, traj: &Trajectory, i: usize) -> Field {
        Field::new(traj.samples[i].psi.iter().map(|p| p + self.offsets[i]).collect())
    }
}

/// Replaces the initial constant of the potential by the unique value for
/// which the velocity stays bounded.
///
/// Along the flow `E = Vol⁻¹∫φ̇ dm` obeys `Ė = κE − Y/Vol`, so boundedness
/// forces `E(0) = Vol⁻¹∫₀^∞ e^{−κt}Y dt`, which fixes the `dm₀`-mean of
/// `φ(0)`. The tail beyond `t_end` uses the fitted decay rate. The per-sample
/// offsets come from integrating the offset equation backwards from
/// infinity, which never touches the exponentially growing forward offset.
pub fn renormalize_initial(traj: &Trajectory) -> Result<Renormalized> {
    if traj.samples.iter().any(|s| s.beta != 0.0) {
        return Err(Error::RenormalizationUnavailable(
            "the run moves by automorphisms; the initial constant is not defined".into(),
        ));
    }
    let th = &traj.config.thresholds;
    let rows = &traj.rows;
    let y_max = rows.iter().map(|r| r.y).fold(0.0, f64::max);
    let rate = if y_max < 1e-20 {
        f64::INFINITY
    } else {
        let fit = y_decay_fit(rows, th)
            .map_err(|e| Error::RenormalizationUnavailable(format!("no decay fit: {e}")))?;
        if !(fit.r2 > th.r2_min && fit.rate > 0.0) {
            return Err(Error::RenormalizationUnavailable(format!(
                "Y tail does not decay exponentially (rate {:.3e}, r2 {:.4})",
                fit.rate, fit.r2
            )));
        }
        fit.rate
    };
    let kappa = traj.bg.kappa();
    let n = traj.samples.len();
    let last = &traj.samples[n - 1];
    let t_end = last.t;

    let mut integral = 0.0;
    for i in 1..n {
        let (t0, t1) = (rows[i - 1].t, rows[i].t);
        integral += 0.5 * (t1 - t0) * ((-kappa * t0).exp() * rows[i - 1].y + (-kappa * t1).exp() * rows[i].y);
    }
    if rate.is_finite() {
        integral += rows[n - 1].y * (-kappa * t_end).exp() / (kappa + rate);
    }
    let s0 = traj.state(0)?;
    let lf = s0
        .log_density()
        .zip_map(traj.bg.f(), |a, b| a - b);
    let c0 = (integral / VOL - s0.integrate(&lf) / VOL) / kappa;

    let mut offsets = vec![0.0; n];
    offsets[n - 1] = -last.g / kappa;
    for i in (0..n - 1).rev() {
        let h = traj.samples[i + 1].t - traj.samples[i].t;
        let (g0, g1) = (traj.samples[i].g, traj.samples[i + 1].g);
        offsets[i] = (-kappa * h).exp() * offsets[i + 1] - discounted_integral(g0, g1, kappa, h);
    }
    let psi0 = Field::new(traj.samples[0].psi.clone());
    let c0_backward = offsets[0] + s0.integrate(&psi0) / VOL;

    let mut sup_velocity: f64 = 0.0;
    for (i, s) in traj.samples.iter().enumerate() {
        let v = velocity(&traj.bg, &Field::new(s.psi.clone()), Gauge::Free, traj.config.eps_pos)?;
        let m = v
            .shape_rate
            .map(|x| x + v.g + kappa * offsets[i])
            .max_abs();
        sup_velocity = sup_velocity.max(m);
    }
    Ok(Renormalized {
        c0,
        c0_backward,
        offsets,
        sup_velocity,
        tail_rate: rate,
    })
}

/// Finite-difference weights for the first derivative at `x0` from the nodes
/// `xs` (Fornberg's recursion).
pub fn fd_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; 2]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|r| r[1]).collect()
}

/// For each sample, `max|φ̇ + βh − u − mean|` with `φ̇` from a five-point
/// finite difference of the stored potentials. Samples without a full
/// stencil are skipped.
pub fn velocity_potential_residuals(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    let n = traj.samples.len();
    let mut out = Vec::new();
    if n < 5 {
        return Ok(out);
    }
    let nodes = traj.bg.size();
    for i in 0..n {
        let lo = i.saturating_sub(2).min(n - 5);
        let idx: Vec<usize> = (lo..lo + 5).collect();
        let ts: Vec<f64> = idx.iter().map(|&j| traj.samples[j].t).collect();
        let w = fd_weights(traj.samples[i].t, &ts);
        let st = traj.state(i)?;
        let h = st.moment_map();
        let beta = traj.samples[i].beta;
        let mut diff = vec![0.0; nodes];
        for (k, d) in diff.iter_mut().enumerate() {
            let mut dphi = 0.0;
            for (wj, &j) in w.iter().zip(&idx) {
                dphi += wj * traj.samples[j].psi[k];
            }
            *d = dphi - beta * h[k] - st.ricci_potential()[k];
        }
        let f = Field::new(diff);
        let mean = traj.bg.grid().integrate_slice(f.values()) / VOL;
        out.push((traj.samples[i].t, f.shifted(-mean).max_abs()));
    }
    Ok(out)
}
