use std::path::Path;
use std::process::{Command, Output};

fn sasaki(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sasaki"))
        .args(args)
        .env_remove("SASAKI_CONFIG")
        .env_remove("SASAKI_PRESET")
        .env_remove("SASAKI_OUT")
        .env_remove("SASAKI_SEED")
        .env_remove("SASAKI_N_THREADS")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{
  "geometry": {"slopes": [2.0, 2.0], "n": 24},
  "initial_potential": {"family": "legendre", "coefficients": {"2": 0.2}},
  "flow": {"t_end": 0.5, "spectrum_k": 4}
}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = sasaki(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--n-threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["diagnostics.csv", "snapshots.jsonl", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(header.starts_with("t,Y,W,Z,a,vol,R_mean,R_min,R_max,osc_u,grad_u_max,fut,mabuchi,nu,lambda_lo,lambda_hi,diam_T,dim_hol,shi_m1,shi_m2,equiv_int\n"));
}

#[test]
fn toml_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[geometry]\nweights = [2.0, 1.0]\nn = 24\n[flow]\nt_end = 0.2\ngauge = \"pinned\"\n").unwrap();
    let out = dir.path().join("out");
    let o = sasaki(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"flow": {"t_end": 1.0, "dt_maxx": 0.1}}"#).unwrap();
    let o = sasaki(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dt_maxx"), "{}", stderr(&o));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(sasaki(&["run"]).status.code(), Some(2));
    assert_eq!(sasaki(&["run", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(sasaki(&["run", "--preset", "round", "--config", "x.json"]).status.code(), Some(2));
    assert_eq!(sasaki(&["spectrum", "--preset", "round", "--n-threads", "0"]).status.code(), Some(2));
}

#[test]
fn spectrum_of_the_round_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = sasaki(&["spectrum", "--preset", "round", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ev: Vec<f64> = serde_json::from_value(v["eigenvalues"].clone()).unwrap();
    for (got, want) in ev.iter().zip([1.0, 3.0, 6.0, 10.0]) {
        assert!((got - want).abs() < 1e-6);
    }
    assert_eq!(v["dim_hol_sector"], 1);
    assert!(dir.path().join("spectrum.json").is_file());
}

#[test]
fn environment_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sasaki"))
        .arg("spectrum")
        .env("SASAKI_PRESET", "football-21")
        .env("SASAKI_OUT", dir.path())
        .env("SASAKI_N_THREADS", "1")
        .env_remove("SASAKI_CONFIG")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("spectrum.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["eigenvalues"].as_array().unwrap().len() == 8);
}

#[test]
fn empty_sweep_writes_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, r#"{"slopes": [], "amplitudes": []}"#).unwrap();
    let out = dir.path().join("sweep");
    let o = sasaki(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(std::fs::read_to_string(out.join("summary.json")).unwrap().trim(), "[]");
}

#[test]
fn small_sweep_runs_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(
        &spec,
        r#"{"template": {"geometry": {"slopes": [2.0, 2.0], "n": 24}, "flow": {"t_end": 0.2, "spectrum_k": 2}},
            "slopes": [[2.0, 2.0], [2.0, 1.0]], "amplitudes": [0.1]}"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let o = sasaki(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--n-threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[1]["fut"].as_f64().unwrap() + 0.5).abs() < 1e-6);
    assert!(out.join("run-001").join("report.json").is_file());
}

#[test]
fn continuity_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("cont");
    let o = sasaki(&["continuity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("continuity.json")).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 35);
    assert!(v["final_curvature_deviation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn injected_fault_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = sasaki(&["check", "--n", "32", "--inject-fault", "flip-curvature", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.contains("FAIL gauss-bonnet")), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("check.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], false);
}
