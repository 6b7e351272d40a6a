use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recl::sim::{generate_cohort, Scenario, TAU};

fn recl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recl"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_cohort(dir: &Path, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cohort = generate_cohort(Scenario::One, n, TAU, &mut rng).unwrap();
    fs::write(dir.join("data.csv"), cohort.to_csv()).unwrap();
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn fit_then_assign_reproduces_training_assignments() {
    let dir = tempfile::tempdir().unwrap();
    write_cohort(dir.path(), 300);
    fs::write(dir.path().join("run.cfg"), "# AIPW run\nmethod = AIPW\nt = 3\nps_formula = x1 + x2\n").unwrap();
    let out = recl(&["fit", "--data", "data.csv", "--config", "run.cfg", "--max-depth", "2", "--out", "fit"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = dir.path().join("fit");
    for f in ["regime.json", "regime.txt", "costs.csv", "assignments.csv", "smr_summary.txt", "ps_summary.txt", "manifest.txt"] {
        assert!(fit.join(f).exists(), "missing {f}");
    }
    let manifest = read(fit.join("manifest.txt"));
    assert!(manifest.contains("arms = 0:0,1:1"));
    assert!(manifest.contains("config.max_depth = 2"));
    assert!(read(fit.join("costs.csv")).starts_with("id,cost_0,cost_1,best_label\n"));

    let out = recl(&["assign", "--regime", "fit/regime.json", "--covariates", "data.csv", "--out", "assigned.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir.path().join("assigned.csv")), read(fit.join("assignments.csv")));
}

#[test]
fn evaluate_writes_value_report_and_group_curves() {
    let dir = tempfile::tempdir().unwrap();
    write_cohort(dir.path(), 300);
    let out = recl(&["fit", "--data", "data.csv", "--method", "IPW", "--t", "3", "--ps-formula", "x1 + x2", "--out", "fit"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = recl(
        &["evaluate", "--regime", "fit/regime.json", "--data", "data.csv", "--t", "2,3", "--grid-points", "5", "--out", "eval"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = dir.path().join("eval");
    let report = read(eval.join("value_report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "t,Observed,Regime");
    assert_eq!(lines.len(), 3);
    for f in ["crf_concordant_unadjusted.csv", "crf_disconcordant_unadjusted.csv"] {
        let text = read(eval.join(f));
        assert!(text.starts_with("time,value\n"));
        let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]), "{f} not monotone");
    }
}

#[test]
fn ipw_without_propensity_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    write_cohort(dir.path(), 50);
    let out = recl(&["fit", "--data", "data.csv", "--method", "IPW", "--t", "3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("propensity required"));
}

#[test]
fn malformed_data_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "id,time,status,treatment,x1\na,1.0,2,0,0.1\n").unwrap();
    let out = recl(&["fit", "--data", "bad.csv", "--method", "OR", "--t", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = recl(&["simulate", "--n", "50"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = recl(
        &["simulate", "--seed", "3", "--scenario", "2", "--n", "150", "--reps", "2", "--test-size", "200", "--methods", "ReCL-IPW,Optimal", "--out", "sim"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read(dir.path().join("sim/report.csv"));
    assert!(report.starts_with("replicate,method,t,accuracy,value\n"));
    assert_eq!(report.lines().count(), 1 + 2 * 2);
    assert!(read(dir.path().join("sim/manifest.txt")).contains("seed = 3"));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = recl(&["verify"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
