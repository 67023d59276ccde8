use sasaki_core::app;
use sasaki_core::check::{self, Fault};
use sasaki_core::config::RunConfig;
use sasaki_core::flow::{self, Sample, StepStats};
use sasaki_core::geometry::validate_state;
use sasaki_core::io;
use sasaki_core::stability::eigen_spectrum;
use sasaki_core::{BackgroundGeometry, Field, GeometryConfig};

#[test]
fn reduced_formulas_match_the_complex_chart() {
    for seed in 0..3 {
        let r = check::reduction_oracle(128, seed, 3).unwrap();
        assert!(r.passed, "seed {seed}: {}", r.line());
    }
}

#[test]
fn round_spectrum_at_two_resolutions() {
    let solve = |n: usize| {
        let bg = BackgroundGeometry::new(GeometryConfig::regular(n)).unwrap().shared();
        eigen_spectrum(&validate_state(&Field::zeros(n), &bg).unwrap(), 6).unwrap()
    };
    let (a, b) = (solve(96), solve(128));
    for (l, (x, y)) in a.eigenvalues.iter().zip(&b.eigenvalues).enumerate() {
        let exact = ((l + 1) * (l + 2)) as f64 / 2.0;
        assert!((y - exact).abs() < 1e-6, "l = {}: {y}", l + 1);
        assert!((x - y).abs() < 1e-8);
    }
    assert_eq!(b.dim_hol_sector, 1);
    assert!((b.nu - 3.0).abs() < 1e-6);
    assert!((b.lambda_proxy.0 - 2.0).abs() < 1e-6 && (b.lambda_proxy.1 - 2.0).abs() < 1e-6);
}

fn short_run() -> flow::Trajectory {
    let mut cfg = RunConfig::preset("perturbed-regular").unwrap();
    cfg.geometry.n = 32;
    cfg.flow.t_end = 0.3;
    app::simulate(&cfg, None).unwrap().0
}

#[test]
fn injected_fault_is_caught() {
    let traj = short_run();
    let gb = |fault| {
        check::trajectory_suites(&traj, None, 0, fault)
            .unwrap()
            .into_iter()
            .find(|s| s.name == "gauss-bonnet")
            .unwrap()
    };
    assert!(gb(None).passed);
    let flipped = gb(Some(Fault::FlipCurvature));
    assert!(!flipped.passed, "{}", flipped.line());
}

#[test]
fn snapshots_rederive_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset("football-21").unwrap();
    cfg.geometry.n = 32;
    cfg.flow.t_end = 0.5;
    app::cmd_run(&cfg, None, dir.path()).unwrap();

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(io::REPORT_FILE)).unwrap()).unwrap();
    let config: RunConfig = serde_json::from_value(report["config"].clone()).unwrap();
    let snaps = io::read_snapshots(&dir.path().join(io::SNAPSHOT_FILE)).unwrap();
    let bg = BackgroundGeometry::new(config.geometry.resolve().unwrap()).unwrap().shared();
    let samples = snaps
        .iter()
        .map(|s| Sample {
            t: s.t,
            psi: s.psi.clone(),
            offset: s.offset,
            beta: s.beta,
            g: 0.0,
        })
        .collect();
    let traj = flow::finish(bg.clone(), config.flow.clone(), samples, StepStats::default()).unwrap();
    let mut table = Vec::new();
    io::write_csv(&mut table, &traj.rows).unwrap();
    let written = std::fs::read_to_string(dir.path().join(io::CSV_FILE)).unwrap();
    let table = String::from_utf8(table).unwrap();
    assert_eq!(table, written);

    // the nodal potential alone gives the same geometry
    for s in snaps.iter().step_by(17) {
        let a = app::snapshot_state(&bg, s, config.flow.eps_pos).unwrap();
        let b = validate_state(&Field::new(s.phi.clone()), &bg).unwrap();
        assert!(a.curvature().zip_map(b.curvature(), |x, y| x - y).max_abs() < 1e-12);
    }
}
