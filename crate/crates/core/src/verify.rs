//! Small-instance self-checks: efficient against naive pseudo-observations,
//! the expansion identity against the brute-force regime search, and the
//! two-arm reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::{Cohort, Subject};
use crate::contrast::{CostMatrix, Method};
use crate::crf::{pseudo_observations, pseudo_observations_naive};
use crate::error::Result;
use crate::expansion::{expand, weighted_misclassification};
use crate::oracle::{brute_force_regime, enumerate_regimes};
use crate::pipeline::{fit_itr, fit_itr_binary, PsSource, RunConfig};
use crate::propensity::PsFormula;
use crate::tree::Regime;

/// Random cohort with `n` subjects, `p` covariates and `k` arms. Times are
/// drawn on a coarse grid so that ties between subjects and between events
/// and censoring are frequent.
pub fn random_cohort(rng: &mut impl Rng, n: usize, p: usize, k: usize) -> Result<Cohort> {
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = rng.random_range(0..k);
        let c = if rng.random_bool(0.5) {
            4.0
        } else {
            rng.random_range(1..=8) as f64 * 0.5
        };
        let mut events: Vec<f64> = (1..=(2.0 * c) as usize)
            .map(|j| j as f64 * 0.5)
            .filter(|_| rng.random_bool(0.3))
            .collect();
        if rng.random_bool(0.2) {
            events.push(rng.random_range(0.01..c));
            events.sort_by(f64::total_cmp);
            events.dedup();
        }
        subjects.push(Subject::new(format!("r{i}"), x, a, events, c)?);
    }
    Cohort::new(subjects, p, k, None)
}

/// Cost matrix, covariate rows and candidate splits.
pub type CostInstance = (CostMatrix, Vec<Vec<f64>>, Vec<(usize, f64)>);

/// Random cost matrix with covariates on a small lattice, and the candidate
/// splits at the lattice midpoints (at most six).
pub fn random_cost_instance(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
) -> Result<CostInstance> {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..2).map(|_| rng.random_range(0..4) as f64).collect())
        .collect();
    let signals: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ids = (0..n).map(|i| i.to_string()).collect();
    let cm = CostMatrix::from_signals(1.0, Method::Aipw, ids, signals)?;
    let splits = vec![(0, 0.5), (0, 1.5), (0, 2.5), (1, 0.5), (1, 1.5), (1, 2.5)];
    Ok((cm, x, splits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Largest gap between efficient and naive pseudo-observations over
/// `instances` random cohorts and several horizons.
pub fn check_pseudo_observations(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(2..=50);
        let cohort = random_cohort(&mut rng, n, 1, 2)?;
        for t in [0.5, 1.0, 1.75, 2.5, 4.0] {
            let fast = pseudo_observations(&cohort, t)?;
            let slow = pseudo_observations_naive(&cohort, t)?;
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(CheckResult {
        name: "pseudo-observations",
        passed: worst <= 1e-10,
        detail: format!("{instances} cohorts, max |efficient - naive| = {worst:.3e}"),
    })
}

/// Minimises the expanded weighted misclassification over the enumerated
/// regime space and compares the total cost of that minimiser with the
/// brute-force cost minimum.
pub fn check_expansion(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=3);
        let depth = rng.random_range(0..=2);
        let (cm, x, splits) = random_cost_instance(&mut rng, n, k)?;
        let splits = &splits[..if depth == 2 { 3 } else { 6 }];
        let direct = brute_force_regime(&cm, &x, splits, depth)?;
        let examples = expand(&cm, &x)?;
        let mut best: Option<(f64, f64)> = None;
        for rule in enumerate_regimes(k, splits, depth) {
            let loss = weighted_misclassification(&examples, |xi| rule.assign(xi));
            if best.is_none_or(|(b, _)| loss < b - 1e-12) {
                let assigned: Vec<usize> = x.iter().map(|xi| rule.assign(xi)).collect();
                best = Some((loss, cm.objective(&assigned)));
            }
        }
        let (_, via_expansion) = best.expect("nonempty regime space");
        worst = worst.max((via_expansion - direct.objective).abs());
    }
    Ok(CheckResult {
        name: "expansion identity",
        passed: worst <= 1e-10,
        detail: format!("{instances} instances, max objective gap = {worst:.3e}"),
    })
}

/// Binary and multi-arm pipelines on random two-arm cohorts must produce the
/// same tree.
pub fn check_two_arm_reduction(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut skipped = 0;
    for _ in 0..instances {
        let n = rng.random_range(10..=40);
        let cohort = random_cohort(&mut rng, n, 2, 2)?;
        if cohort.arm_counts().contains(&0) {
            skipped += 1;
            continue;
        }
        let config = RunConfig::new(Method::Ipw, 2.0).with_ps(PsSource::Formula(PsFormula::all(2)));
        let multi = fit_itr(&cohort, &config)?;
        let binary = fit_itr_binary(&cohort, &config)?;
        if multi.tree != binary.tree {
            mismatches += 1;
        }
    }
    Ok(CheckResult {
        name: "two-arm reduction",
        passed: mismatches == 0,
        detail: format!("{} cohorts, {mismatches} differing trees", instances - skipped),
    })
}

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_pseudo_observations(seed, 200)?,
        check_expansion(seed, 100)?,
        check_two_arm_reduction(seed, 20)?,
    ])
}
