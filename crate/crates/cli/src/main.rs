use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sasaki_core::app::{self, CheckOptions, SweepSpec};
use sasaki_core::check::Fault;
use sasaki_core::config::RunConfig;

/// Normalized Sasaki–Ricci flow laboratory on U(1)-symmetric models.
///
/// Every flag can also be set through an environment variable with the
/// `SASAKI_` prefix, for example `SASAKI_PRESET=round`.
#[derive(Parser, Debug)]
#[command(name = "sasaki", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON or TOML run configuration.
    #[arg(long, env = "SASAKI_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named configuration: round, perturbed-regular, football-21.
    #[arg(long, env = "SASAKI_PRESET")]
    preset: Option<String>,
    /// Output directory; overrides the configured one.
    #[arg(long, env = "SASAKI_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, env = "SASAKI_N_THREADS")]
    n_threads: Option<usize>,
    /// Seed for randomized checks; overrides the configured one.
    #[arg(long, env = "SASAKI_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the flow and write the table, snapshots and report.
    Run(Common),
    /// Run the identity suites on every preset.
    Check {
        #[command(flatten)]
        common: Common,
        /// Grid size for the suites.
        #[arg(long, default_value_t = 128)]
        n: usize,
        /// Use the full preset run lengths instead of the short default.
        #[arg(long)]
        full: bool,
        /// Corrupt a quantity on purpose to confirm that the suites fail.
        #[arg(long, value_parser = parse_fault, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Dump the spectrum of the configured initial state.
    Spectrum(Common),
    /// Solve the continuity path from the configured initial state.
    Continuity(Common),
    /// Run a grid of configurations in parallel.
    Sweep(Common),
}

fn parse_fault(s: &str) -> std::result::Result<Fault, String> {
    match s {
        "flip-curvature" => Ok(Fault::FlipCurvature),
        other => Err(format!("unknown fault `{other}`")),
    }
}

fn load(common: &Common) -> Result<(RunConfig, Option<PathBuf>)> {
    let (mut cfg, base) = match (&common.config, &common.preset) {
        (Some(path), _) => (RunConfig::load(path)?, app::config_base(path)),
        (None, Some(name)) => (RunConfig::preset(name)?, None),
        (None, None) => bail!("one of --config or --preset is required"),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.outputs.dir = out.clone();
    }
    Ok((cfg, base))
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            bail!("--n-threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            threads(common.n_threads)?;
            let (cfg, base) = load(&common)?;
            let out = out_dir(&common, &cfg);
            let report = app::cmd_run(&cfg, base.as_deref(), &out)?;
            println!("verdict: {}", serde_json::to_string(&report.verdict)?);
            if let Some(y) = report.rates.y {
                println!("Y rate: {:.6} (r2 {:.6})", y.rate, y.r2);
            }
            println!(
                "flags: M={} F={} T={} C={}",
                report.flags.m_proxy, report.flags.f, report.flags.t, report.flags.c_proxy
            );
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Check {
            common,
            n,
            full,
            inject_fault,
        } => {
            threads(common.n_threads)?;
            let opts = CheckOptions {
                n,
                t_end: if full { None } else { CheckOptions::default().t_end },
                seed: common.seed.unwrap_or(0),
                fault: inject_fault,
                ..Default::default()
            };
            let summary = app::cmd_check(&opts, common.out.as_deref())?;
            for e in &summary.entries {
                println!("{:<18} {}", e.scope, e.suite.line());
            }
            println!("{}", if summary.passed { "all suites passed" } else { "suite failures" });
            Ok(summary.passed)
        }
        Command::Spectrum(common) => {
            threads(common.n_threads)?;
            let (cfg, base) = load(&common)?;
            let report = app::cmd_spectrum(&cfg, base.as_deref(), common.out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Continuity(common) => {
            threads(common.n_threads)?;
            let (cfg, base) = load(&common)?;
            let out = out_dir(&common, &cfg);
            let (_, report) = app::cmd_continuity(&cfg, base.as_deref(), Some(&out))?;
            let mono = report.monotonicity.as_ref().map(|m| m.holds()).unwrap_or(false);
            println!(
                "{} path points, final |R - kappa| = {:.3e}, monotone: {mono}",
                report.points.len(),
                report.final_curvature_deviation
            );
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Sweep(common) => {
            threads(common.n_threads)?;
            let Some(path) = &common.config else {
                bail!("sweep needs --config with a sweep grid");
            };
            let spec = SweepSpec::load(path)?;
            let out = common.out.clone().unwrap_or_else(|| spec.template.outputs.dir.clone());
            let rows = app::cmd_sweep(&spec, &out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} runs, {failed} failed; summary in {}", rows.len(), Path::new(&out).join("summary.csv").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
