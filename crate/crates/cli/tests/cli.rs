use std::path::{Path, PathBuf};
use std::process::Command as Process;

use domsde_cli::{execute, run, Command, RunConfig};
use domsde_core::lyapunov::{check_drift_condition, check_elliptic_condition, LyapunovCertificate};
use domsde_core::models::make_example_62;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn builtin_configs() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn load(path: &Path) -> RunConfig {
    RunConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_ou(out: &Path) -> RunConfig {
    let mut cfg = load(&configs_dir().join("ou.toml"));
    cfg.n_paths = 50;
    cfg.out = out.to_path_buf();
    cfg
}

fn domsde(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_domsde")).args(args).output().unwrap()
}

#[test]
fn builtin_configs_round_trip() {
    let files = builtin_configs();
    assert!(files.len() >= 5);
    for f in files {
        let cfg = load(&f);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg, "{}", f.display());
    }
}

#[test]
fn simulate_writes_report_and_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_ou(tmp.path());
    assert_eq!(run(Command::Simulate, &cfg).unwrap(), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "simulate");
    assert_eq!(report["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config_digest"], cfg.digest().as_str());
    assert_eq!(report["estimates"][0]["config_digest"], cfg.digest().as_str());
    assert_eq!(report["paths"].as_array().unwrap().len(), 50);
    let csv = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path_id,t,x_1,alive"));
    assert_eq!(lines.next(), Some("0,0.0,1.0,1"));
    // 50 paths of 1000 steps plus the initial states.
    assert_eq!(csv.lines().count(), 1 + 50 * 1001);
}

#[test]
fn thinning_keeps_first_and_last_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_ou(tmp.path());
    cfg.n_paths = 2;
    cfg.output.thin = 300;
    let out = execute(Command::Simulate, &cfg).unwrap();
    let csv = &out.csv[0].1;
    let times: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("0,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(times.len(), 5);
    assert_eq!(times[0], "0.0");
    assert_eq!(times[4], "1.0");
}

#[test]
fn no_paths_flag_suppresses_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_ou(tmp.path());
    cfg.output.paths = false;
    run(Command::Lifetime, &cfg).unwrap();
    assert!(tmp.path().join("report.json").exists());
    assert!(!tmp.path().join("per_path.csv").exists());
}

#[test]
fn same_seed_gives_identical_report_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(Command::Simulate, &small_ou(a.path())).unwrap();
    run(Command::Simulate, &small_ou(b.path())).unwrap();
    for name in ["report.json", "paths.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn check_lyapunov_matches_direct_calls() {
    let cfg = load(&configs_dir().join("ex62.toml"));
    let out = execute(Command::CheckLyapunov, &cfg).unwrap();
    let m = make_example_62(0.5).unwrap();
    let region = m.domain.exhaustion_level(cfg.lyapunov.level);
    let pot = m.potential().unwrap();
    let drift = check_drift_condition(pot, &region, cfg.lyapunov.grid, Some(0.0)).unwrap();
    let elliptic = check_elliptic_condition(
        pot,
        m.coeffs.diffusion(),
        &m.domain,
        &region,
        cfg.lyapunov.grid,
        cfg.lyapunov.moll_width,
        m.lyapunov().unwrap(),
    )
    .unwrap();
    let certs: &[LyapunovCertificate] = &out.report.certificates;
    assert_eq!(certs[0], drift);
    assert_eq!(certs[1], elliptic);
    let json: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
    assert_eq!(json["certificates"][1]["inequality"], "elliptic-condition");
    assert_eq!(json["certificates"][1]["verdict"], "pass");
}

#[test]
fn constants_command_reports_formula_values() {
    let mut cfg = load(&configs_dir().join("ex62.toml"));
    cfg.constants.k = Some(9.0);
    let out = execute(Command::Constants, &cfg).unwrap();
    let c = out.report.constants.unwrap();
    assert_eq!(c.epsilon, 1.5);
    assert!((c.delta - 0.125).abs() < 1e-15);
    assert!((c.mu - 0.0625).abs() < 1e-15);
    assert!((c.nu - 0.0625 / 108.0).abs() < 1e-15);
}

#[test]
fn krylov_scales_give_equal_ratios() {
    let cfg = load(&configs_dir().join("bm.toml"));
    let mut cfg = cfg;
    cfg.n_paths = 200;
    let out = execute(Command::Krylov, &cfg).unwrap();
    let r: Vec<f64> = out.report.estimates.iter().map(|r| r.estimate).collect();
    assert_eq!(r.len(), 4);
    for v in &r {
        assert!((v - r[0]).abs() <= 1e-12);
    }
}

#[test]
fn unresolved_paths_make_exit_status_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = load(&configs_dir().join("bessel.toml"));
    cfg.n_paths = 20;
    cfg.policy.max_steps = 3;
    cfg.out = tmp.path().to_path_buf();
    assert_ne!(run(Command::Lifetime, &cfg).unwrap(), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], false);
}

#[test]
fn binary_runs_and_honours_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "model = \"ou\"\nseed = 1\nn_paths = 20\nhorizon = 0.5\n[policy]\ndt_max = 0.01\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("o");
    let o = domsde(&[
        "simulate",
        "-c",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
        "--workers",
        "2",
        "--no-paths",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert!(!out_dir.join("paths.csv").exists());
}

#[test]
fn binary_rejects_bad_configs_with_named_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg_path,
        "model = \"ou\"\nseed = 1\nn_paths = 2\nhorizon = 1.0\nfooo = 1\n",
    )
    .unwrap();
    let o = domsde(&["constants", "-c", cfg_path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("fooo"));

    std::fs::write(
        &cfg_path,
        "model = \"ou\"\nseed = 1\nn_paths = 2\nhorizon = 1.0\n[moments]\nepsilon = 2.5\n",
    )
    .unwrap();
    let o = domsde(&["moments", "-c", cfg_path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("[0, 2)"));
}

#[test]
fn missing_config_file_names_the_path() {
    let o = domsde(&["simulate", "-c", "/nonexistent/run.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn start_outside_domain_is_rejected() {
    let mut cfg = load(&configs_dir().join("bessel.toml"));
    cfg.start = Some(vec![-1.0]);
    let err = execute(Command::Simulate, &cfg).unwrap_err().to_string();
    assert!(err.contains("outside"), "{err}");
}

#[test]
fn domain_override_is_applied() {
    let text = "model = \"bm\"\nseed = 2\nn_paths = 100\nhorizon = 5.0\nstart = [0.0]\n\
                [domain]\ntype = \"box\"\nlo = [-0.5]\nhi = [0.5]\n";
    let cfg = RunConfig::parse(text).unwrap();
    let out = execute(Command::Lifetime, &cfg).unwrap();
    assert_eq!(out.report.estimates[0].estimand, "explosion-probability");
    assert!(out.report.estimates[0].estimate > 0.99);
}

#[test]
fn check_lyapunov_probes_potential_growth() {
    let cfg = load(&configs_dir().join("ex62.toml"));
    let out = execute(Command::CheckLyapunov, &cfg).unwrap();
    let g = out.report.potential_growth.unwrap();
    assert!(g.reached > 0);
    assert!(g.min_ratio >= 1.0);
    assert!(g.max_near_boundary > 1e3);
    assert!(out.report.warnings.is_empty(), "{:?}", out.report.warnings);

    let mut cfg = load(&configs_dir().join("ou.toml"));
    cfg.domain = RunConfig::parse(
        "model = \"ou\"\nseed = 1\nn_paths = 1\nhorizon = 1.0\n[domain]\ntype = \"box\"\nlo = [-2.0]\nhi = [2.0]\n",
    )
    .unwrap()
    .domain;
    let out = execute(Command::CheckLyapunov, &cfg).unwrap();
    assert!(out.report.potential_growth.is_some());
}
