//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints its `PASS`/`FAIL criterion N: ...` line; the process
//! fails if any criterion fails.

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use recl::cohort::{Cohort, Subject};
use recl::contrast::{arm_signal_aipw, arm_signal_ipw, binary_contrast, Method};
use recl::crf::pseudo_observations;
use recl::evaluation::{concordance_split, empirical_value};
use recl::expansion::{expand, weighted_misclassification};
use recl::oracle::{brute_force_regime, enumerate_regimes};
use recl::pipeline::{fit_itr, fit_itr_binary, fit_nuisance, PsSource, RunConfig};
use recl::propensity::{fit_propensity, PsFormula, PsModel};
use recl::sim::{
    generate_cohort, run_experiment, true_mean_count, ExperimentReport, Scenario, ScenarioSpec, SimMethod, TAU,
};
use recl::smr::{fit_smr, SmrConfig};
use recl::tree::Regime;
use recl::verify::{check_expansion, check_pseudo_observations, check_two_arm_reduction, random_cohort, random_cost_instance};

type Outcome = (bool, String);

fn verdict(passed: bool, detail: impl Into<String>) -> Outcome {
    (passed, detail.into())
}

fn scenario_one() -> &'static (ExperimentReport, Duration) {
    static CELL: OnceLock<(ExperimentReport, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = ScenarioSpec::new(Scenario::One, 600, vec![3.0], 1);
        let start = Instant::now();
        let report = run_experiment(&spec, &SimMethod::ALL, &Default::default()).unwrap();
        (report, start.elapsed())
    })
}

fn mean_value(report: &ExperimentReport, m: SimMethod) -> f64 {
    report.summary_for(m, 3.0).unwrap().mean_value
}

fn criterion_01_scenario_one_accuracy() -> Outcome {
    let (report, elapsed) = scenario_one();
    let s = report.summary_for(SimMethod::AipwTrue, 3.0).unwrap();
    verdict(
        s.replicates == 20 && s.mean_accuracy >= 0.85 && elapsed.as_secs() <= 300,
        format!(
            "ReCL-AIPW-T mean accuracy {:.4} over {} replicates (>= 0.85) in {:.1}s (<= 300s)",
            s.mean_accuracy,
            s.replicates,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_02_method_ordering() -> Outcome {
    let (report, _) = scenario_one();
    let opt = mean_value(report, SimMethod::Optimal);
    let aipw = mean_value(report, SimMethod::AipwTrue);
    let ipw = mean_value(report, SimMethod::Ipw);
    let random = mean_value(report, SimMethod::Random);
    let slack = -0.005;
    let ok = aipw - opt > slack && ipw - aipw > slack && random - aipw > 0.0;
    verdict(
        ok,
        format!("values Optimal {opt:.4} <= AIPW-T {aipw:.4} <= IPW {ipw:.4}; Random {random:.4} > AIPW-T"),
    )
}

fn criterion_03_scenario_two() -> Outcome {
    let spec = ScenarioSpec::new(Scenario::Two, 800, vec![3.0], 1);
    let report = run_experiment(&spec, &SimMethod::ALL, &Default::default()).unwrap();
    let aipw = mean_value(&report, SimMethod::AipwTrue);
    let others: Vec<(SimMethod, f64)> = SimMethod::ALL
        .into_iter()
        .filter(|m| !matches!(m, SimMethod::Optimal | SimMethod::AipwTrue))
        .map(|m| (m, mean_value(&report, m)))
        .collect();
    let (best_other, best_value) = others
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    verdict(
        aipw < best_value,
        format!("ReCL-AIPW-T mean value {aipw:.4}; best other non-optimal {best_other} {best_value:.4}"),
    )
}

/// `Σ_{s <= t} d(s)/R(s)` recomputed from scratch for a list of subjects.
fn hand_nelson_aalen(subjects: &[&Subject], t: f64) -> f64 {
    let mut times: Vec<f64> = subjects
        .iter()
        .flat_map(|s| s.event_times().iter().copied())
        .filter(|&e| e <= t)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&s| {
            let d = subjects
                .iter()
                .map(|x| x.event_times().iter().filter(|&&e| e == s).count())
                .sum::<usize>() as f64;
            let r = subjects.iter().filter(|x| x.censor_time() >= s).count() as f64;
            d / r
        })
        .sum()
}

fn criterion_04_pseudo_observations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let cohort = random_cohort(&mut rng, n, 1, 2).unwrap();
        let all: Vec<&Subject> = cohort.subjects().iter().collect();
        for t in [0.5, 1.25, 2.0, 3.5] {
            let fast = pseudo_observations(&cohort, t).unwrap();
            let full = hand_nelson_aalen(&all, t);
            for (i, &f) in fast.iter().enumerate() {
                let rest: Vec<&Subject> = all.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| *s).collect();
                let po = n as f64 * full - (n - 1) as f64 * hand_nelson_aalen(&rest, t);
                worst = worst.max((po - f).abs());
            }
        }
    }
    // no censoring before t
    let mut uncensored_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=30);
        let subjects = (0..n)
            .map(|i| {
                let events: Vec<f64> = (1..8).map(|j| j as f64 * 0.5).filter(|_| rng.random_bool(0.4)).collect();
                Subject::new(format!("u{i}"), vec![0.0], i % 2, events, 4.0).unwrap()
            })
            .collect();
        let cohort = Cohort::new(subjects, 1, 2, None).unwrap();
        let t = 2.75;
        for (s, po) in cohort.subjects().iter().zip(pseudo_observations(&cohort, t).unwrap()) {
            uncensored_gap = uncensored_gap.max((po - s.count_at(t) as f64).abs());
        }
    }
    verdict(
        worst <= 1e-10 && uncensored_gap <= 1e-10,
        format!("max |efficient - refit| = {worst:.2e} over 200 cohorts; uncensored max |PO - N(t)| = {uncensored_gap:.2e}"),
    )
}

fn criterion_05_expansion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=3);
        let depth = rng.random_range(0..=2);
        let (cm, x, splits) = random_cost_instance(&mut rng, n, k).unwrap();
        let splits = &splits[..if depth == 2 { 3 } else { 6 }];
        let direct = brute_force_regime(&cm, &x, splits, depth).unwrap();
        let examples = expand(&cm, &x).unwrap();
        let rules = enumerate_regimes(k, splits, depth);
        let losses: Vec<f64> = rules
            .iter()
            .map(|r| weighted_misclassification(&examples, |xi| r.assign(xi)))
            .collect();
        let min_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let winner = &rules[losses.iter().position(|&l| l == min_loss).unwrap()];
        let assigned: Vec<usize> = x.iter().map(|xi| winner.assign(xi)).collect();
        worst = worst.max((cm.objective(&assigned) - direct.objective).abs());
    }
    verdict(
        worst <= 1e-10,
        format!("100 instances, max |objective(expansion minimiser) - brute force| = {worst:.2e}"),
    )
}

fn integrate(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 4000;
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += s * h / 3.0;
    }
    total
}

/// `E[Ñᵃ(t)]` under Scenario 1 by one-dimensional quadrature.
fn scenario_one_truth(a: usize, t: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let l = |x1: f64| (1.5 * x1 - 0.5).abs();
    let whole = [-12.0, -1.0, -0.5, 1.0 / 3.0, 12.0];
    let ex2 = integrate(|x| x.exp() * phi(x), &whole);
    let ex2_upper = integrate(|x| x.exp() * phi(x), &[-0.5, 12.0]);
    let el = integrate(|x| l(x).exp() * phi(x), &whole);
    let el_upper = integrate(|x| (l(x).exp() - 1.0) * phi(x), &[-1.0, 1.0 / 3.0, 12.0]);
    let e = if a == 0 {
        ex2 + ex2_upper * el_upper
    } else {
        ex2 * el - ex2_upper * el_upper
    };
    0.5 * t * (-0.8f64).exp() * e
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn criterion_06_double_robustness() -> Outcome {
    let t = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cohort = generate_cohort(Scenario::One, 4000, TAU, &mut rng).unwrap();
    let po = pseudo_observations(&cohort, t).unwrap();
    let right_ps = fit_propensity(&cohort, &Scenario::One.true_ps_formula()).unwrap();
    let wrong_ps = fit_propensity(&cohort, &Scenario::One.misspecified_ps_formula()).unwrap();
    let wrong_or = fit_smr(&cohort, &SmrConfig::default()).unwrap();

    let mut lines = Vec::new();
    let mut ok = true;
    for a in 0..2 {
        let truth = scenario_one_truth(a, t);
        let signals = |ps: &PsModel, or: &dyn Fn(&[f64]) -> f64, augmented: bool| -> Vec<f64> {
            cohort
                .subjects()
                .iter()
                .zip(&po)
                .map(|(s, &y)| {
                    let pa = ps.probabilities(&s.covariates)[a];
                    if augmented {
                        arm_signal_aipw(y, s.treatment, pa, or(&s.covariates), a)
                    } else {
                        arm_signal_ipw(y, s.treatment, pa, a)
                    }
                })
                .collect()
        };
        let smr_mean = |x: &[f64]| wrong_or.predict_mean(x, a, t);
        let true_mean = |x: &[f64]| true_mean_count(Scenario::One, x, a, t);
        let cases = [
            ("AIPW right PS, wrong OR", signals(&right_ps, &smr_mean, true)),
            ("AIPW wrong PS, right OR", signals(&wrong_ps, &true_mean, true)),
            ("IPW right PS", signals(&right_ps, &true_mean, false)),
        ];
        for (name, v) in cases {
            let (m, se) = mean_se(&v);
            let z = (m - truth) / se;
            ok &= z.abs() <= 3.0;
            lines.push(format!("arm {a} {name}: {m:.4} vs {truth:.4} ({z:+.2} SE)"));
        }
    }
    verdict(ok, lines.join("; "))
}

fn criterion_07_model_recovery() -> Outcome {
    let n = 2000;
    let theta = [0.5, -0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let subjects = (0..n)
        .map(|i| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let a = usize::from(rng.random_bool(0.5));
            let eta = theta[0] * x + a as f64 * (theta[1] + theta[2] * x);
            let c = TAU - 1.0 + rng.random::<f64>();
            let mean = 0.5 * eta.exp() * c;
            let count = Poisson::new(mean).unwrap().sample(&mut rng) as usize;
            let mut ev: Vec<f64> = (0..count).map(|_| c * rng.random::<f64>()).collect();
            ev.sort_by(f64::total_cmp);
            ev.dedup();
            ev.retain(|&e| e > 0.0);
            Subject::new(format!("m{i}"), vec![x], a, ev, c).unwrap()
        })
        .collect();
    let cohort = Cohort::new(subjects, 1, 2, None).unwrap();
    let fit = fit_smr(&cohort, &SmrConfig::default()).unwrap();
    let smr_err = fit.theta.iter().zip(theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let subjects = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p1 = 1.0 / (1.0 + (-(0.3 * x[0] - 0.5 * x[1])).exp());
            let a = usize::from(rng.random::<f64>() < p1);
            Subject::new(format!("p{i}"), x, a, vec![], 1.0).unwrap()
        })
        .collect();
    let cohort = Cohort::new(subjects, 3, 2, None).unwrap();
    let ps = fit_propensity(&cohort, &PsFormula::linear(&[0, 1])).unwrap();
    let slopes = &ps.coefficients[1][1..];
    let ps_err = (slopes[0] - 0.3).abs().max((slopes[1] + 0.5).abs());
    verdict(
        smr_err <= 0.1 && fit.score_norm < 1e-8 && ps_err <= 0.15,
        format!(
            "SMR theta {:?} max error {smr_err:.4}, score norm {:.1e}; PS slopes ({:.3}, {:.3}) max error {ps_err:.4}",
            fit.theta.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            fit.score_norm,
            slopes[0],
            slopes[1]
        ),
    )
}

fn criterion_08_two_arm_consistency() -> Outcome {
    let mut differing = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let cohort = generate_cohort(Scenario::One, 200, TAU, &mut rng).unwrap();
        let method = [Method::OutcomeRegression, Method::Ipw, Method::Aipw][seed as usize % 3];
        let config = RunConfig::new(method, 3.0).with_ps(PsSource::Formula(Scenario::One.true_ps_formula()));
        let multi = fit_itr(&cohort, &config).unwrap();
        let binary = fit_itr_binary(&cohort, &config).unwrap();
        let nuisance = fit_nuisance(&cohort, &config).unwrap();
        let bc = binary_contrast(&cohort, method, 3.0, &nuisance.inputs()).unwrap();
        let from_rows: Vec<f64> = multi.costs.costs.iter().map(|r| r[0].max(r[1])).collect();
        let same_pair = bc.label == multi.costs.best_label
            && bc.weights().iter().zip(&from_rows).all(|(a, b)| (a - b).abs() <= 1e-12);
        if multi.tree != binary.tree || !same_pair {
            differing += 1;
        }
    }
    verdict(differing == 0, format!("50 two-arm cohorts, {differing} with differing trees or (|C|, W)"))
}

fn criterion_09_replacement_suite() -> Outcome {
    // The readmission dataset is not shipped, so the property suite stands in.
    let po = check_pseudo_observations(9, 50).unwrap();
    let ex = check_expansion(9, 50).unwrap();
    let two = check_two_arm_reduction(9, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cohort = random_cohort(&mut rng, 30, 2, 2).unwrap();
    let flat = PsModel::from_coefficients(PsFormula::all(2), vec![vec![0.0; 3]; 2]).unwrap();
    let v = empirical_value(&cohort, &cohort.treatments(), &flat, 2.0, "observed").unwrap();
    let pos = pseudo_observations(&cohort, 2.0).unwrap();
    let identity = (v - pos.iter().sum::<f64>() / pos.len() as f64).abs() < 1e-12;
    let split = concordance_split(&cohort, &vec![0; 30]).unwrap();
    let partition = split.concordant.is_disjoint(&split.discordant)
        && split.concordant.len() + split.discordant.len() == 30;
    verdict(
        po.passed && ex.passed && two.passed && identity && partition,
        format!(
            "dataset absent, replaced: {}; {}; {}; uniform-PS value identity {identity}; partition {partition}",
            po.line(),
            ex.line(),
            two.line()
        ),
    )
}

fn criterion_10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_recl"))
            .args(["simulate", "--seed", "42", "--n", "200", "--t", "2,3", "--reps", "3", "--test-size", "500"])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        (
            std::fs::read(out.join("report.csv")).unwrap(),
            std::fs::read(out.join("summary.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    verdict(
        a == b && !a.0.is_empty(),
        format!("two simulate runs with seed 42: report {} bytes, identical {}", a.0.len(), a == b),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_01_scenario_one_accuracy),
        (2, criterion_02_method_ordering),
        (3, criterion_03_scenario_two),
        (4, criterion_04_pseudo_observations),
        (5, criterion_05_expansion_oracle),
        (6, criterion_06_double_robustness),
        (7, criterion_07_model_recovery),
        (8, criterion_08_two_arm_consistency),
        (9, criterion_09_replacement_suite),
        (10, criterion_10_determinism),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let (passed, detail) = check();
        println!("{} criterion {n}: {detail}", if passed { "PASS" } else { "FAIL" });
        failed += usize::from(!passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
