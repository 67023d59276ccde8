//! Scenario orchestration behind the command line: run, check, spectrum,
//! continuity and sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::check::{self, Fault, SuiteResult};
use crate::config::{GeometrySpec, InitialPotential, RunConfig, PRESETS};
use crate::continuity::{self, ContinuityPath, MonotonicityReport};
use crate::error::{Error, Result};
use crate::flow::{self, StepStats, Trajectory, Verdict};
use crate::geometry::{BackgroundGeometry, MetricState};
use crate::io;
use crate::spectral1d::Field;
use crate::stability::{self, ConditionFlags, DecayFit, SpectrumReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rate: f64,
    pub r2: f64,
    pub samples: usize,
}

impl From<DecayFit> for FitSummary {
    fn from(f: DecayFit) -> Self {
        Self {
            rate: f.rate,
            r2: f.r2,
            samples: f.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub y: Option<FitSummary>,
    pub w: Option<FitSummary>,
    pub u_inf: Option<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub t: f64,
    pub y: f64,
    pub u_inf: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub fut: f64,
    pub fut_curvature: f64,
    pub fut_closed: f64,
    pub nu: f64,
    pub lambda_proxy: (f64, f64),
    pub lowest_eigenvalue: f64,
    pub dim_hol: usize,
}

/// Suprema over the run of the quantities bounded uniformly along the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerelmanMonitor {
    pub r_abs_max: f64,
    pub u_inf_max: f64,
    pub grad_u_max: f64,
    pub diameter_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    pub perelman: PerelmanMonitor,
    pub shi_sup: (f64, f64),
    pub equivalence_integral: f64,
    pub equivalence_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormalizationSummary {
    pub c0: f64,
    pub c0_backward: f64,
    pub sup_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub verdict: Verdict,
    pub rates: Rates,
    pub flags: ConditionFlags,
    #[serde(rename = "final")]
    pub final_state: FinalSummary,
    pub monitors: Monitors,
    pub renormalization: Option<RenormalizationSummary>,
    pub steps: StepStats,
    pub config: RunConfig,
}

fn fit_series(traj: &Trajectory, rel_floor: f64, f: impl Fn(&crate::functionals::DiagnosticsRow) -> f64) -> Option<FitSummary> {
    let series = traj.series(f);
    stability::fit_decay_rate(&stability::fit_window(&series, rel_floor))
        .ok()
        .map(FitSummary::from)
}

/// Aggregates a trajectory into the report document.
pub fn build_report(traj: &Trajectory, config: &RunConfig) -> Result<RunReport> {
    let rows = &traj.rows;
    let last = rows
        .last()
        .ok_or_else(|| Error::Usage("empty trajectory".into()))?;
    let floor = traj.config.thresholds.noise_floor;
    let rates = Rates {
        y: fit_series(traj, floor, |r| r.y),
        w: fit_series(traj, floor, |r| r.w),
        // ‖u‖∞ is linear in the deviation, so its noise floor is the square root
        u_inf: fit_series(traj, floor.sqrt(), |r| r.u_max),
    };
    let flags = stability::condition_flags(rows, stability::DELTA_T, stability::TOL_F)?;
    let max_of = |f: &dyn Fn(&crate::functionals::DiagnosticsRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let monitors = Monitors {
        perelman: PerelmanMonitor {
            r_abs_max: max_of(&|r| r.r_abs_max),
            u_inf_max: max_of(&|r| r.u_max),
            grad_u_max: max_of(&|r| r.grad_u_max),
            diameter_max: max_of(&|r| r.diam_t),
        },
        shi_sup: traj.shi_sup,
        equivalence_integral: last.equiv_int,
        equivalence_ratio: traj.equivalence_ratio,
    };
    let renormalization = flow::renormalize_initial(traj).ok().map(|r| RenormalizationSummary {
        c0: r.c0,
        c0_backward: r.c0_backward,
        sup_velocity: r.sup_velocity,
    });
    Ok(RunReport {
        version: VERSION.to_string(),
        verdict: traj.verdict.clone(),
        rates,
        flags,
        final_state: FinalSummary {
            t: last.t,
            y: last.y,
            u_inf: last.u_max,
            r_min: last.r_min,
            r_max: last.r_max,
            fut: last.fut,
            fut_curvature: last.fut_curvature,
            fut_closed: last.fut_closed,
            nu: last.nu,
            lambda_proxy: (last.lambda_lo, last.lambda_hi),
            lowest_eigenvalue: last.lowest_eig,
            dim_hol: last.dim_hol,
        },
        monitors,
        renormalization,
        steps: traj.stats.clone(),
        config: config.clone(),
    })
}

/// Background and initial state of a configuration. Relative nodal data
/// paths resolve against `base`.
pub fn initial_state(config: &RunConfig, base: Option<&Path>) -> Result<(Arc<BackgroundGeometry>, MetricState)> {
    config.validate()?;
    let bg = BackgroundGeometry::new(config.geometry.resolve()?)?.shared();
    let phi0 = config.initial_potential.realize(bg.grid(), base)?;
    let state = MetricState::from_parts(bg.clone(), phi0, 0.0, 0.0, config.flow.eps_pos)?;
    Ok((bg, state))
}

/// Integrates a configuration without touching the filesystem.
pub fn simulate(config: &RunConfig, base: Option<&Path>) -> Result<(Trajectory, RunReport)> {
    let (bg, state) = initial_state(config, base)?;
    let traj = flow::run(&state.phi(), &bg, &config.flow)?;
    let report = build_report(&traj, config)?;
    Ok((traj, report))
}

/// Runs a configuration and writes the table, snapshot stream and report into `out`.
pub fn cmd_run(config: &RunConfig, base: Option<&Path>, out: &Path) -> Result<RunReport> {
    let (traj, report) = simulate(config, base)?;
    fs::create_dir_all(out)?;
    io::write_csv_file(&out.join(io::CSV_FILE), &traj.rows)?;
    if config.outputs.snapshots {
        io::write_snapshots_file(&out.join(io::SNAPSHOT_FILE), &traj)?;
    }
    io::write_json(&out.join(io::REPORT_FILE), &report)?;
    Ok(report)
}

/// Spectrum of the configured initial state.
pub fn cmd_spectrum(config: &RunConfig, base: Option<&Path>, out: Option<&Path>) -> Result<SpectrumReport> {
    let (_, state) = initial_state(config, base)?;
    let report = stability::eigen_spectrum(&state, config.flow.spectrum_k)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        io::write_json(&dir.join("spectrum.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub version: String,
    pub points: Vec<continuity::PathPoint>,
    pub monotonicity: Option<MonotonicityReport>,
    /// `‖R − κ‖∞` of the total potential at the last path point.
    pub final_curvature_deviation: f64,
    pub config: RunConfig,
}

/// Solves the continuity path from the configured initial state as reference.
pub fn cmd_continuity(config: &RunConfig, base: Option<&Path>, out: Option<&Path>) -> Result<(ContinuityPath, ContinuityReport)> {
    let (_, reference) = initial_state(config, base)?;
    let path = continuity::solve_path(&reference, &continuity::default_t_grid(), &config.continuity)?;
    let monotonicity = continuity::path_monotonicity(&path).ok();
    let last = path.state(path.points.len() - 1)?;
    let k = last.kappa();
    let report = ContinuityReport {
        version: VERSION.to_string(),
        points: path.points.clone(),
        monotonicity,
        final_curvature_deviation: last.curvature().map(|r| r - k).max_abs(),
        config: config.clone(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        io::write_json(&dir.join("continuity.json"), &report)?;
    }
    Ok((path, report))
}

/// Parameter grid for a sweep. Each amplitude is the coefficient of `P₂` in
/// the initial potential. An empty list means the template value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub template: RunConfig,
    #[serde(default)]
    pub slopes: Vec<[f64; 2]>,
    #[serde(default)]
    pub amplitudes: Vec<f64>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.template.validate()?;
        Ok(spec)
    }

    /// Cartesian product of the grid as `(slopes, amplitude, config)`.
    pub fn expand(&self) -> Vec<([f64; 2], Option<f64>, RunConfig)> {
        if self.slopes.is_empty() && self.amplitudes.is_empty() {
            return Vec::new();
        }
        let n = self.template.geometry.n;
        let slopes = if self.slopes.is_empty() {
            vec![self.template.geometry.resolve().map(|g| [g.p_minus, g.p_plus]).unwrap_or([2.0, 2.0])]
        } else {
            self.slopes.clone()
        };
        let amps: Vec<Option<f64>> = if self.amplitudes.is_empty() {
            vec![None]
        } else {
            self.amplitudes.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for s in &slopes {
            for a in &amps {
                let mut cfg = self.template.clone();
                cfg.geometry = GeometrySpec::slopes(s[0], s[1], n);
                if let Some(a) = a {
                    cfg.initial_potential = InitialPotential::legendre(&[(2, *a)]);
                }
                out.push((*s, *a, cfg));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub p_minus: f64,
    pub p_plus: f64,
    pub amplitude: Option<f64>,
    pub verdict: Option<String>,
    pub fut: Option<f64>,
    pub rate: Option<f64>,
    pub nu_inf: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 9] = ["run", "p_minus", "p_plus", "amplitude", "verdict", "fut", "rate", "nu_inf", "error"];

fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Converged { .. } => "converged",
        Verdict::SolitonFloor { .. } => "soliton_floor",
        Verdict::Undecided => "undecided",
    }
}

/// Runs every grid point in parallel. A failed run is recorded in its row
/// and does not stop the others.
pub fn cmd_sweep(spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(out)?;
    let jobs = spec.expand();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (slopes, amp, cfg))| {
            let name = format!("run-{i:03}");
            let mut row = SweepRow {
                run: name.clone(),
                p_minus: slopes[0],
                p_plus: slopes[1],
                amplitude: *amp,
                verdict: None,
                fut: None,
                rate: None,
                nu_inf: None,
                error: None,
            };
            match cmd_run(cfg, None, &out.join(&name)) {
                Ok(report) => {
                    row.verdict = Some(verdict_name(&report.verdict).to_string());
                    row.fut = Some(report.final_state.fut);
                    row.rate = report.rates.y.map(|f| f.rate);
                    row.nu_inf = Some(report.final_state.nu);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    write_sweep_summary(&out.join("summary.csv"), &rows)?;
    io::write_json(&out.join("summary.json"), &rows)?;
    Ok(rows)
}

fn write_sweep_summary(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    let mut text = SWEEP_COLUMNS.join(",");
    text.push('\n');
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run,
            r.p_minus,
            r.p_plus,
            opt(r.amplitude),
            r.verdict.as_deref().unwrap_or(""),
            opt(r.fut),
            opt(r.rate),
            opt(r.nu_inf),
            err
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub n: usize,
    /// Shortens every preset run when set.
    pub t_end: Option<f64>,
    /// Also run each preset at half the sample cadence for the `Ẏ` gain.
    pub halving: bool,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub presets: Vec<String>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            n: crate::spectral1d::DEFAULT_NODES,
            t_end: Some(2.0),
            halving: true,
            seed: 0,
            fault: None,
            presets: PRESETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub scope: String,
    pub suite: SuiteResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub version: String,
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
}

/// Runs the identity suites on every preset plus the reduction oracle.
pub fn cmd_check(opts: &CheckOptions, out: Option<&Path>) -> Result<CheckSummary> {
    let mut entries = Vec::new();
    for name in &opts.presets {
        let mut cfg = RunConfig::preset(name)?;
        cfg.geometry.n = opts.n;
        if let Some(t) = opts.t_end {
            cfg.flow.t_end = t;
        }
        let (traj, _) = simulate(&cfg, None)?;
        let halved = if opts.halving {
            let mut h = cfg.clone();
            h.flow = cfg.flow.halved_cadence();
            Some(simulate(&h, None)?.0)
        } else {
            None
        };
        for suite in check::trajectory_suites(&traj, halved.as_ref(), opts.seed, opts.fault)? {
            entries.push(CheckEntry {
                scope: name.clone(),
                suite,
            });
        }
    }
    entries.push(CheckEntry {
        scope: "regular".into(),
        suite: check::reduction_oracle(opts.n, opts.seed, 3)?,
    });
    let summary = CheckSummary {
        version: VERSION.to_string(),
        passed: entries.iter().all(|e| e.suite.passed),
        entries,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        io::write_json(&dir.join("check.json"), &summary)?;
    }
    Ok(summary)
}

/// Potential field of a snapshot, for offline re-derivation.
pub fn snapshot_state(bg: &Arc<BackgroundGeometry>, snap: &io::Snapshot, eps_pos: f64) -> Result<MetricState> {
    MetricState::from_parts(bg.clone(), Field::new(snap.phi.clone()), 0.0, snap.t, eps_pos)
}

/// Directory of the nodal-data base for a config path.
pub fn config_base(path: &Path) -> Option<PathBuf> {
    path.parent().map(Path::to_path_buf)
}
