//! Simulation scenarios and replicate experiments.
//!
//! Three standard normal covariates; event times from a homogeneous Poisson
//! process with subject-specific rate `exp{·}·dμ(t)`, `μ(t) = 0.5t`, observed
//! until `C ~ Uniform(τ−1, τ)` with `τ = 4`.
//!
//! - Scenario 1 (two arms): `P(A=1|X) = expit(0.3X₁ − 0.5X₂)`,
//!   `g(X) = I(X₁ > −1)·I(X₂ > −0.5)`,
//!   rate `exp{X₂ + |1.5X₁ − 0.5|·(A − g)² − 0.8}`.
//! - Scenario 2 (three arms, coded 0, 1, 2): `P(A=a|X) ∝ (1, e^{X₁−X₂}, e^{0.5X₁−X₂})`,
//!   `g(X) = I(X₁ > −0.5)·[I(X₂ > −0.5) + I(X₂ > 0.5)]`,
//!   rate `exp{0.3·|1.5X₁ − 0.5|·(A − g)² − 0.3}`.
//!
//! Random streams: every draw comes from a ChaCha8 generator seeded with the
//! experiment seed and positioned on stream `4·replicate + purpose`, where
//! purpose 0 generates the training cohort, 1 the test covariates and 2 the
//! random-allocation comparator. Results therefore depend only on
//! `(seed, replicate)`, not on scheduling.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Subject};
use crate::contrast::{cost_matrix, CostInputs, Method};
use crate::crf::{first_event_pseudo_observations, pseudo_observations};
use crate::error::{ReclError, Result};
use crate::pipeline::regime_from_costs;
use crate::propensity::{fit_propensity, PsFormula, PsModel, PsTerm};
use crate::smr::{fit_smr, SmrConfig, SmrFit};
use crate::tree::{Regime, TreeConfig};

pub const TAU: f64 = 4.0;
pub const DEFAULT_TEST_SIZE: usize = 5000;
pub const DEFAULT_REPLICATES: usize = 20;
pub const FULL_SCALE_REPLICATES: usize = 100;
const P: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    One,
    Two,
}

impl Scenario {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            _ => Err(ReclError::invalid(format!("unknown scenario {id}"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }

    pub fn k(self) -> usize {
        match self {
            Scenario::One => 2,
            Scenario::Two => 3,
        }
    }

    /// True assignment probabilities.
    pub fn propensity(self, x: &[f64]) -> Vec<f64> {
        match self {
            Scenario::One => {
                let p1 = 1.0 / (1.0 + (-(0.3 * x[0] - 0.5 * x[1])).exp());
                vec![1.0 - p1, p1]
            }
            Scenario::Two => {
                let w = [1.0, (x[0] - x[1]).exp(), (0.5 * x[0] - x[1]).exp()];
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }
        }
    }

    /// Event intensity `exp{·} · μ'(t)` with `μ'(t) = 0.5`.
    pub fn rate(self, x: &[f64], a: usize) -> f64 {
        let g = optimal_regime(self, x) as f64;
        let gap = (a as f64 - g).powi(2);
        let linear = match self {
            Scenario::One => x[1] + (1.5 * x[0] - 0.5).abs() * gap - 0.8,
            Scenario::Two => 0.3 * (1.5 * x[0] - 0.5).abs() * gap - 0.3,
        };
        0.5 * linear.exp()
    }

    /// Regressors of the correctly specified propensity model.
    pub fn true_ps_formula(self) -> PsFormula {
        PsFormula::linear(&[0, 1])
    }

    /// `A ~ X₁ + exp(X₃)`.
    pub fn misspecified_ps_formula(self) -> PsFormula {
        PsFormula {
            terms: vec![PsTerm::Linear(0), PsTerm::Exp(2)],
        }
    }
}

/// Optimal arm under the scenario's generating model.
pub fn optimal_regime(scenario: Scenario, x: &[f64]) -> usize {
    match scenario {
        Scenario::One => usize::from(x[0] > -1.0 && x[1] > -0.5),
        Scenario::Two => {
            if x[0] > -0.5 {
                usize::from(x[1] > -0.5) + usize::from(x[1] > 0.5)
            } else {
                0
            }
        }
    }
}

/// `E[N(t) | X = x, A = a]` in closed form.
pub fn true_mean_count(scenario: Scenario, x: &[f64], a: usize, t: f64) -> f64 {
    scenario.rate(x, a) * t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub tau: f64,
    pub horizons: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
    pub test_size: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n: usize, horizons: Vec<f64>, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            n,
            tau: TAU,
            horizons,
            seed,
            replicates: DEFAULT_REPLICATES,
            test_size: DEFAULT_TEST_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(ReclError::invalid("simulated cohorts need n >= 2"));
        }
        if self.tau.is_nan() || self.tau <= 1.0 {
            return Err(ReclError::invalid("follow-up must exceed 1"));
        }
        if self.horizons.is_empty() {
            return Err(ReclError::invalid("at least one horizon required"));
        }
        if let Some(t) = self.horizons.iter().find(|&&t| !(t > 0.0 && t <= self.tau)) {
            return Err(ReclError::invalid(format!("horizon {t} outside (0, {}]", self.tau)));
        }
        if self.test_size == 0 {
            return Err(ReclError::invalid("test size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Train = 0,
    Test = 1,
    Random = 2,
}

fn stream_rng(seed: u64, replicate: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4 * replicate as u64 + purpose as u64);
    rng
}

fn normal_covariates(rng: &mut impl Rng) -> Vec<f64> {
    (0..P).map(|_| StandardNormal.sample(rng)).collect()
}

fn draw_arm(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// Event times on `[0, c]` for a homogeneous process: a Poisson count, then
/// sorted uniform times.
fn poisson_process(rng: &mut impl Rng, rate: f64, c: f64) -> Vec<f64> {
    let mean = rate * c;
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = Vec::with_capacity(count);
    while times.len() < count {
        let e = c * rng.random::<f64>();
        if e > 0.0 && !times.contains(&e) {
            times.push(e);
        }
    }
    times.sort_by(f64::total_cmp);
    times
}

/// Draws one cohort of size `n`.
pub fn generate_cohort(scenario: Scenario, n: usize, tau: f64, rng: &mut impl Rng) -> Result<Cohort> {
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let x = normal_covariates(rng);
        let a = draw_arm(rng, &scenario.propensity(&x));
        let c = tau - 1.0 + rng.random::<f64>();
        let events = poisson_process(rng, scenario.rate(&x, a), c);
        subjects.push(Subject::new(format!("s{}", i + 1), x, a, events, c)?);
    }
    Cohort::new(subjects, P, scenario.k(), Some(tau))
}

/// Training cohort for one replicate.
pub fn gen_scenario(spec: &ScenarioSpec, replicate: usize) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, replicate, Purpose::Train);
    generate_cohort(spec.scenario, spec.n, spec.tau, &mut rng)
}

/// Test covariates for one replicate.
pub fn gen_test_covariates(spec: &ScenarioSpec, replicate: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(spec.seed, replicate, Purpose::Test);
    (0..spec.test_size).map(|_| normal_covariates(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeEvaluation {
    pub accuracy: f64,
    pub value: f64,
}

/// Accuracy against the optimal rule and analytic value of fixed arm
/// choices on test covariates.
pub fn evaluate_assignments(actions: &[usize], test: &[Vec<f64>], scenario: Scenario, t: f64) -> RegimeEvaluation {
    let n = test.len() as f64;
    let hits = test
        .iter()
        .zip(actions)
        .filter(|(x, &a)| optimal_regime(scenario, x) == a)
        .count();
    let value: f64 = test
        .iter()
        .zip(actions)
        .map(|(x, &a)| true_mean_count(scenario, x, a, t))
        .sum();
    RegimeEvaluation {
        accuracy: hits as f64 / n,
        value: value / n,
    }
}

pub fn evaluate_regime(regime: &impl Regime, test: &[Vec<f64>], scenario: Scenario, t: f64) -> RegimeEvaluation {
    let actions: Vec<usize> = test.iter().map(|x| regime.assign(x)).collect();
    evaluate_assignments(&actions, test, scenario, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SimMethod {
    AipwTrue,
    AipwFalse,
    Ipw,
    Smr,
    First,
    Random,
    Optimal,
}

impl SimMethod {
    pub const ALL: [SimMethod; 7] = [
        SimMethod::AipwTrue,
        SimMethod::AipwFalse,
        SimMethod::Ipw,
        SimMethod::Smr,
        SimMethod::First,
        SimMethod::Random,
        SimMethod::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimMethod::AipwTrue => "ReCL-AIPW-T",
            SimMethod::AipwFalse => "ReCL-AIPW-F",
            SimMethod::Ipw => "ReCL-IPW",
            SimMethod::Smr => "ReCL-SMR",
            SimMethod::First => "First",
            SimMethod::Random => "Random",
            SimMethod::Optimal => "Optimal",
        }
    }
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimMethod {
    type Err = ReclError;

    fn from_str(s: &str) -> Result<Self> {
        SimMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ReclError::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub replicate: usize,
    pub method: SimMethod,
    pub horizon: f64,
    pub accuracy: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub method: Option<SimMethod>,
    pub horizon: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: SimMethod,
    pub horizon: f64,
    pub replicates: usize,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
    pub mean_value: f64,
    pub se_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ScenarioSpec,
    pub methods: Vec<SimMethod>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<ReplicateFailure>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentReport {
    pub fn rows_for(&self, method: SimMethod, horizon: f64) -> impl Iterator<Item = &ReportRow> {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.horizon == horizon)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for &t in &self.spec.horizons {
            for &m in &self.methods {
                let acc: Vec<f64> = self.rows_for(m, t).map(|r| r.accuracy).collect();
                let val: Vec<f64> = self.rows_for(m, t).map(|r| r.value).collect();
                let (mean_accuracy, se_accuracy) = mean_se(&acc);
                let (mean_value, se_value) = mean_se(&val);
                out.push(SummaryRow {
                    method: m,
                    horizon: t,
                    replicates: acc.len(),
                    mean_accuracy,
                    se_accuracy,
                    mean_value,
                    se_value,
                });
            }
        }
        out
    }

    pub fn summary_for(&self, method: SimMethod, horizon: f64) -> Option<SummaryRow> {
        self.summary()
            .into_iter()
            .find(|s| s.method == method && s.horizon == horizon)
    }

    /// `replicate,method,t,accuracy,value`, rows in replicate order.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("replicate,method,t,accuracy,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.replicate, r.method, r.horizon, r.accuracy, r.value);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,t,replicates,mean_accuracy,se_accuracy,mean_value,se_value\n");
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.method, s.horizon, s.replicates, s.mean_accuracy, s.se_accuracy, s.mean_value, s.se_value
            );
        }
        out
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("replicate,method,t,error\n");
        for f in &self.failures {
            let method = f.method.map(|m| m.to_string()).unwrap_or_default();
            let t = f.horizon.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{method},{t},\"{}\"", f.replicate, f.error.replace('"', "'"));
        }
        out
    }
}

struct ReplicateModels {
    smr: Option<Result<SmrFit>>,
    ps_true: Option<Result<PsModel>>,
    ps_false: Option<Result<PsModel>>,
}

fn fitted<T>(slot: &Option<Result<T>>) -> Result<&T> {
    match slot.as_ref().expect("fitted when needed") {
        Ok(v) => Ok(v),
        Err(e) => Err(ReclError::invalid(e.to_string())),
    }
}

fn needs(methods: &[SimMethod], any: &[SimMethod]) -> bool {
    methods.iter().any(|m| any.contains(m))
}

fn run_replicate(
    spec: &ScenarioSpec,
    methods: &[SimMethod],
    tree: &TreeConfig,
    replicate: usize,
) -> (Vec<ReportRow>, Vec<ReplicateFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let fail = |method: Option<SimMethod>, horizon: Option<f64>, e: &ReclError| ReplicateFailure {
        replicate,
        method,
        horizon,
        error: e.to_string(),
    };
    let cohort = match gen_scenario(spec, replicate) {
        Ok(c) => c,
        Err(e) => {
            failures.push(fail(None, None, &e));
            return (rows, failures);
        }
    };
    let test = gen_test_covariates(spec, replicate);
    let x = cohort.covariate_rows();
    use SimMethod::*;
    let models = ReplicateModels {
        smr: needs(methods, &[AipwTrue, AipwFalse, Smr]).then(|| fit_smr(&cohort, &SmrConfig::default())),
        ps_true: needs(methods, &[AipwTrue, Ipw, First])
            .then(|| fit_propensity(&cohort, &spec.scenario.true_ps_formula())),
        ps_false: needs(methods, &[AipwFalse]).then(|| fit_propensity(&cohort, &spec.scenario.misspecified_ps_formula())),
    };

    for &t in &spec.horizons {
        let pos = needs(methods, &[AipwTrue, AipwFalse, Ipw]).then(|| pseudo_observations(&cohort, t));
        let first_pos = needs(methods, &[First]).then(|| first_event_pseudo_observations(&cohort, t));
        for &method in methods {
            let evaluation: Result<RegimeEvaluation> = (|| match method {
                Optimal => Ok(evaluate_regime(&|x: &[f64]| optimal_regime(spec.scenario, x), &test, spec.scenario, t)),
                Random => {
                    let mut rng = stream_rng(spec.seed, replicate, Purpose::Random);
                    let k = spec.scenario.k();
                    let actions: Vec<usize> = test.iter().map(|_| rng.random_range(0..k)).collect();
                    Ok(evaluate_assignments(&actions, &test, spec.scenario, t))
                }
                _ => {
                    let (cm_method, inputs) = match method {
                        AipwTrue => (
                            Method::Aipw,
                            CostInputs {
                                fit: Some(fitted(&models.smr)?),
                                ps: Some(fitted(&models.ps_true)?),
                                pseudo_obs: Some(fitted(&pos)?.as_slice()),
                            },
                        ),
                        AipwFalse => (
                            Method::Aipw,
                            CostInputs {
                                fit: Some(fitted(&models.smr)?),
                                ps: Some(fitted(&models.ps_false)?),
                                pseudo_obs: Some(fitted(&pos)?.as_slice()),
                            },
                        ),
                        Ipw => (
                            Method::Ipw,
                            CostInputs {
                                fit: None,
                                ps: Some(fitted(&models.ps_true)?),
                                pseudo_obs: Some(fitted(&pos)?.as_slice()),
                            },
                        ),
                        Smr => (
                            Method::OutcomeRegression,
                            CostInputs {
                                fit: Some(fitted(&models.smr)?),
                                ps: None,
                                pseudo_obs: None,
                            },
                        ),
                        First => (
                            Method::Ipw,
                            CostInputs {
                                fit: None,
                                ps: Some(fitted(&models.ps_true)?),
                                pseudo_obs: Some(fitted(&first_pos)?.as_slice()),
                            },
                        ),
                        Random | Optimal => unreachable!(),
                    };
                    let cm = cost_matrix(&cohort, cm_method, t, &inputs)?;
                    let regime = regime_from_costs(&cm, &x, tree)?;
                    Ok(evaluate_regime(&regime, &test, spec.scenario, t))
                }
            })();
            match evaluation {
                Ok(ev) => rows.push(ReportRow {
                    replicate,
                    method,
                    horizon: t,
                    accuracy: ev.accuracy,
                    value: ev.value,
                }),
                Err(e) => failures.push(fail(Some(method), Some(t), &e)),
            }
        }
    }
    (rows, failures)
}

/// Runs every replicate (in parallel) and collects rows in replicate order.
/// A failing fit is recorded in `failures` and its row omitted.
pub fn run_experiment(spec: &ScenarioSpec, methods: &[SimMethod], tree: &TreeConfig) -> Result<ExperimentReport> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(ReclError::invalid("no methods requested"));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let results: Vec<_> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| run_replicate(spec, &methods, tree, r))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        rows.extend(r);
        failures.extend(f);
    }
    Ok(ExperimentReport {
        spec: spec.clone(),
        methods,
        rows,
        failures,
    })
}
