use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sgd_pce::cli::config::{ExperimentConfig, ExperimentId};
use sgd_pce::cli::output::{coefficients_from_str, num, Table};
use sgd_pce::estimators::Assembler;
use sgd_pce::evaluation::estimate_energy_with;
use sgd_pce::sgd::Initialization;

fn sgd_pce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgd-pce"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn solve(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--out", dir.to_str().unwrap(), "--override", "evaluation.n_mc=500"];
    args.extend_from_slice(extra);
    sgd_pce(&args)
}

#[test]
fn zero_iteration_solve_dumps_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve(dir.path(), &["--override", "sgd.n_iterations=0", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("coefficients.txt")).unwrap();
    assert!(text.contains("# seed: 7"));
    let c = coefficients_from_str(&text).unwrap();
    let want = Initialization::Gaussian { std: 0.1 }.coefficients(50, 35, 7);
    assert_eq!(c, want);
}

#[test]
fn rerun_is_identical_and_dump_reloads() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = solve(dir.path(), &["--override", "sgd.n_iterations=15", "--override", "sgd.record_stride=1"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["coefficients.txt", "trajectory.csv", "summary.csv", "checks.csv", "config.toml"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let cfg = ExperimentConfig::from_toml(&fs::read_to_string(a.path().join("config.toml")).unwrap()).unwrap();
    let c = coefficients_from_str(&fs::read_to_string(a.path().join("coefficients.txt")).unwrap()).unwrap();
    let setup = cfg.problem.build().unwrap();
    let energy = estimate_energy_with(&Assembler::new(&setup).unwrap(), &c, cfg.evaluation.n_mc, cfg.seed).unwrap();
    let summary = Table::parse(&fs::read_to_string(a.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(summary.rows[0][0], "energy");
    assert_eq!(summary.rows[0][2], num(energy.mean));

    let traj = fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("# sgd-pce "));
    assert!(traj.contains(&format!("# config-sha256: {}\n", cfg.hash())));
    let t = Table::parse(&traj).unwrap();
    assert_eq!(t.header, ["n", "rate", "energy", "energy_se", "gradient_norm", "fallbacks"]);
    assert_eq!(t.rows.len(), 16);
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    fs::write(&path, "seed = 3\n[sgd]\nn_iterations = 12\n[problem]\nm = 8\n").unwrap();
    let out = sgd_pce(&[
        "show-config",
        "table2",
        "--config",
        path.to_str().unwrap(),
        "--override",
        "sgd.batch_hessian=16",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.experiment, ExperimentId::Table2);
    assert_eq!((cfg.seed, cfg.sgd.seed), (3, 3));
    assert_eq!((cfg.sgd.n_iterations, cfg.sgd.batch_hessian, cfg.problem.m), (12, 16, 8));
}

#[test]
fn bad_configs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    fs::write(&path, "[sgd]\nn_iterations = 12\nlearning = 3\n").unwrap();
    let out = sgd_pce(&["show-config", "solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning"));

    fs::write(&path, "[sgd]\nn_iterations = = 12\n").unwrap();
    let out = sgd_pce(&["show-config", "solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = sgd_pce(&["experiment", "table9"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sgd_pce(&["show-config", "solve", "--override", "sgd.batch_gradient=0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_writes_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgd_pce(&[
        "experiment",
        "table1",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "evaluation.n_mc=5000",
        "--override",
        "study.betas=[0.05, 0.4]",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS ordering_beta_0.05"), "{stdout}");
    let t = Table::parse(&fs::read_to_string(dir.path().join("table1.csv")).unwrap()).unwrap();
    assert_eq!(t.header[..5], ["beta", "cv_mode", "component", "std", "se"]);
    assert_eq!(t.rows.len(), 6);
    let checks = Table::parse(&fs::read_to_string(dir.path().join("checks.csv")).unwrap()).unwrap();
    assert!(checks.rows.iter().all(|r| r[1] == "true"));
}
