use std::io::Write;

use copt_core::eval::config::{EstimatorKind, Family};
use copt_core::eval::pipeline::{run, write_artifacts, TestMetrics, ARTIFACTS};
use copt_core::eval::sweep::{sweep, write_sweep_csv};
use copt_core::eval::RunConfig;
use copt_core::Error;

fn config(family: &str, params: &str, extra: &str) -> RunConfig {
    let s = format!(
        r#"
version = 1
seed = 5

[problem]
family = "{family}"
params = {{ {params} }}

[data]
samples = 1500

[data.synthetic]
support = 60
classes = 2
groups = 2
seed = 11

[optimizer]
passes = 2
{extra}
"#
    );
    RunConfig::from_toml_str(&s).unwrap()
}

fn assert_certified(cfg: &RunConfig) {
    let out = run(cfg).unwrap();
    let chk = out.check.clone().expect("synthetic runs are checked against the truth");
    assert!(chk.violation_ok && chk.risk_ok, "{:?}: {chk:?}", cfg.problem.family);
    assert_eq!(out.report.support, "true_support");
    assert_eq!(out.proba.len(), 60);
}

#[test]
fn every_family_runs_and_is_certified() {
    assert_certified(&config("rejection", "rejection_budget = 0.1", ""));
    assert_certified(&config("controlled_error", "error_budget = 0.2", ""));
    assert_certified(&config("demographic_parity", "eps = [0.05]", ""));
    assert_certified(&config("equalized_odds", "eps = [0.1]", ""));
    assert_certified(&config("churn", "churn_budget = 0.05", ""));
    assert_certified(&config("set_valued_size", "size_budget = 1.2", ""));
    assert_certified(&config("set_valued_risk", "risk_budget = 0.1", ""));
}

#[test]
fn oracle_estimator_has_zero_deltas() {
    let mut cfg = config("rejection", "rejection_budget = 0.1", "");
    cfg.estimator.kind = EstimatorKind::Oracle;
    let out = run(&cfg).unwrap();
    assert_eq!(out.certificate.delta_l, Some(0.0));
    assert_eq!(out.certificate.delta_c, Some(0.0));
    assert!(out.check.unwrap().violation_ok);
}

#[test]
fn same_seed_same_lambda_artifact() {
    let cfg = config("rejection", "rejection_budget = 0.1", "");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_artifacts(&run(&cfg).unwrap(), a.path()).unwrap();
    write_artifacts(&run(&cfg).unwrap(), b.path()).unwrap();
    for name in ARTIFACTS {
        assert!(a.path().join(name).exists(), "{name}");
    }
    for name in ["lambda.json", "proba.csv", "certificate.json", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn projected_sgd_and_experiment_beta() {
    let cfg = config("rejection", "rejection_budget = 0.1", "algorithm = \"projected_sgd\"\nbeta = { mode = \"experiment\" }");
    let out = run(&cfg).unwrap();
    assert!(out.check.unwrap().violation_ok);
}

#[test]
fn sampled_metrics_flag() {
    let mut cfg = config("rejection", "rejection_budget = 0.1", "");
    cfg.sampled_metrics = true;
    let out = run(&cfg).unwrap();
    match out.report.sampled_test.unwrap() {
        TestMetrics::Classifier(r) => assert!((0.0..=1.0).contains(&r.risk)),
        TestMetrics::Sets(_) => panic!("classifier family"),
    }
}

#[test]
fn csv_source_is_plug_in_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "x,y,g").unwrap();
    for i in 0..300 {
        let x = (i as f64 * 0.37).sin() * 2.0;
        let y = usize::from(x + 0.3 * ((i * 7) % 5) as f64 > 0.5);
        writeln!(f, "{x},{y},{}", i % 2).unwrap();
    }
    drop(f);
    let s = format!(
        r#"
version = 1
[problem]
family = "demographic_parity"
params = {{ eps = [0.05] }}
aware = true
[data.csv]
path = "{}"
features = ["x"]
label = "y"
group = "g"
"#,
        path.display()
    );
    let cfg = RunConfig::from_toml_str(&s).unwrap();
    let out = run(&cfg).unwrap();
    assert!(out.certificate.plug_in_only());
    assert!(out.check.is_none());
    assert_eq!(out.report.support, "unlabeled_pool");
    assert_eq!(out.report.support_size, 120);
}

#[test]
fn iteration_budget_beyond_pool_fails() {
    let cfg = config("rejection", "rejection_budget = 0.1", "iterations = 100000");
    assert!(matches!(run(&cfg), Err(Error::StreamExhausted { .. })));
}

#[test]
fn sweep_is_deterministic_and_sound() {
    let mut cfg = config("rejection", "rejection_budget = 0.1", "");
    cfg.sweep = Some(copt_core::eval::config::SweepConfig { budgets: vec![0.2, 0.05], seeds: vec![0, 1, 2] });
    let a = sweep(&cfg, None).unwrap();
    let b = sweep(&cfg, None).unwrap();
    assert!(a.failures.is_empty());
    assert_eq!(a.rows.len(), 6);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    write_sweep_csv(&a.rows, &mut ca).unwrap();
    write_sweep_csv(&b.rows, &mut cb).unwrap();
    assert_eq!(ca, cb);
    assert!(a.rows.iter().all(|r| r.violation_ok == Some(true) && r.risk_ok == Some(true)));
    let only = sweep(&cfg, Some(&[1])).unwrap();
    assert_eq!(only.rows.len(), 2);
    assert_eq!(only.rows[0], a.rows[1]);
    assert_eq!(cfg.problem.family, Family::Rejection);
}
