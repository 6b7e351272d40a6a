//! Semiparametric multiplicative rates model.
//!
//! The event rate is `exp(θᵀZ) dμ(t)` with an unspecified baseline mean
//! function `μ`. The design vector `Z` stacks the covariates (the α part, no
//! intercept since `μ` absorbs it) with one block `I(a = j)·(1, x)` per
//! non-reference arm `j = 1..K−1`. For `K = 2` this is `Xᵀα + A·(β₀ + Xᵀβ)`;
//! for more arms the one-hot block layout is this crate's own construction.
//!
//! `θ` solves the proportional rates estimating equation
//! `U(θ) = Σᵢ ∫ {Zᵢ − Z̄(s; θ)} dNᵢ(s) = 0` by Newton's method, and the baseline
//! is the Breslow-type estimator `μ̂(t) = Σ_{s<=t} d(s) / Σⱼ Yⱼ(s) e^{θ̂ᵀZⱼ}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::cohort::Cohort;
use crate::crf::{EventTable, StepFunction};
use crate::error::{ReclError, Result};

const RIDGE: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

/// Design vector for covariates `x` under arm `a` of `k`.
pub fn build_design(x: &[f64], a: usize, k: usize) -> Vec<f64> {
    let p = x.len();
    let mut z = Vec::with_capacity(design_dim(p, k));
    z.extend_from_slice(x);
    for j in 1..k {
        if j == a {
            z.push(1.0);
            z.extend_from_slice(x);
        } else {
            z.extend(std::iter::repeat_n(0.0, p + 1));
        }
    }
    z
}

pub fn design_dim(p: usize, k: usize) -> usize {
    p + (k - 1) * (p + 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmrConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmrConfig {
    fn default() -> Self {
        SmrConfig {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmrFit {
    pub theta: Vec<f64>,
    pub baseline: StepFunction,
    pub p: usize,
    pub k: usize,
    pub iterations: usize,
    pub score_norm: f64,
}

impl SmrFit {
    /// `μ̂*(t, x, a) = exp(θ̂ᵀZ(x, a)) · μ̂(t)`.
    pub fn predict_mean(&self, x: &[f64], a: usize, t: f64) -> f64 {
        self.relative_rate(x, a) * self.baseline.eval(t)
    }

    pub fn relative_rate(&self, x: &[f64], a: usize) -> f64 {
        let z = build_design(x, a, self.k);
        dot(&self.theta, &z).exp()
    }

    /// Coefficient names in design order: covariates, then `armJ:1`,
    /// `armJ:<covariate>` per non-reference arm.
    pub fn coefficient_names(&self, covariates: &[String]) -> Vec<String> {
        let mut names: Vec<String> = covariates.to_vec();
        for j in 1..self.k {
            names.push(format!("arm{j}:1"));
            names.extend(covariates.iter().map(|c| format!("arm{j}:{c}")));
        }
        names
    }

    /// Plain-text convergence and coefficient report.
    pub fn summary(&self, covariates: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "score_norm = {:e}", self.score_norm);
        for (name, v) in self.coefficient_names(covariates).iter().zip(&self.theta) {
            let _ = writeln!(out, "{name} = {v}");
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem {
    /// design rows, one per subject
    z: Vec<Vec<f64>>,
    /// subject indices sorted by censoring time, descending
    by_censor_desc: Vec<usize>,
    censor: Vec<f64>,
    table: EventTable,
    /// Σ of Z over all observed events
    event_z_sum: Vec<f64>,
    event_counts: Vec<f64>,
}

struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
    /// Σⱼ Yⱼ(s) e^{θᵀZⱼ} at each distinct event time (unshifted)
    s0: Vec<f64>,
}

impl Problem {
    fn new(cohort: &Cohort) -> Self {
        let k = cohort.k();
        let z: Vec<Vec<f64>> = cohort
            .subjects()
            .iter()
            .map(|s| build_design(&s.covariates, s.treatment, k))
            .collect();
        let dim = design_dim(cohort.p(), k);
        let censor: Vec<f64> = cohort.subjects().iter().map(|s| s.censor_time()).collect();
        let mut by_censor_desc: Vec<usize> = (0..z.len()).collect();
        by_censor_desc.sort_by(|&a, &b| censor[b].total_cmp(&censor[a]));
        let mut event_z_sum = vec![0.0; dim];
        for (s, zi) in cohort.subjects().iter().zip(&z) {
            let m = s.n_events() as f64;
            for (acc, v) in event_z_sum.iter_mut().zip(zi) {
                *acc += m * v;
            }
        }
        Problem {
            z,
            by_censor_desc,
            censor,
            table: EventTable::build(cohort.subjects()),
            event_z_sum,
            event_counts: cohort.subjects().iter().map(|s| s.n_events() as f64).collect(),
        }
    }

    fn dim(&self) -> usize {
        self.event_z_sum.len()
    }

    fn evaluate(&self, theta: &[f64]) -> Option<Evaluation> {
        let dim = self.dim();
        let eta: Vec<f64> = self.z.iter().map(|zi| dot(theta, zi)).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return None;
        }
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; dim];
        let mut s2 = DMatrix::<f64>::zeros(dim, dim);
        let mut score = DVector::from_column_slice(&self.event_z_sum);
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        let mut loglik = 0.0;
        let mut s0_raw = vec![0.0; self.table.times.len()];
        let mut next = 0;
        for j in (0..self.table.times.len()).rev() {
            let s = self.table.times[j];
            while next < self.by_censor_desc.len() && self.censor[self.by_censor_desc[next]] >= s {
                let i = self.by_censor_desc[next];
                let w = (eta[i] - shift).exp();
                let zi = &self.z[i];
                s0 += w;
                for a in 0..dim {
                    s1[a] += w * zi[a];
                    let wa = w * zi[a];
                    for b in 0..=a {
                        s2[(a, b)] += wa * zi[b];
                    }
                }
                next += 1;
            }
            let d = self.table.events[j] as f64;
            s0_raw[j] = s0 * shift.exp();
            loglik -= d * (s0.ln() + shift);
            for a in 0..dim {
                let mean_a = s1[a] / s0;
                score[a] -= d * mean_a;
                for b in 0..=a {
                    let v = d * (s2[(a, b)] / s0 - mean_a * s1[b] / s0);
                    info[(a, b)] += v;
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        loglik += eta
            .iter()
            .zip(&self.event_counts)
            .map(|(e, m)| e * m)
            .sum::<f64>();
        if !loglik.is_finite() || score.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Evaluation {
            loglik,
            score,
            info,
            s0: s0_raw,
        })
    }
}

/// Solves `info · step = score`, adding a small ridge if the Cholesky
/// factorisation fails.
fn newton_step(info: &DMatrix<f64>, score: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = info.clone().cholesky() {
        return Some(ch.solve(score));
    }
    let mut ridged = info.clone();
    for a in 0..ridged.nrows() {
        ridged[(a, a)] += RIDGE;
    }
    ridged
        .clone()
        .cholesky()
        .map(|ch| ch.solve(score))
        .or_else(|| ridged.lu().solve(score))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Fits the rates model by Newton iterations on the estimating equation.
pub fn fit_smr(cohort: &Cohort, config: &SmrConfig) -> Result<SmrFit> {
    if cohort.total_events() == 0 {
        return Err(ReclError::NoEvents);
    }
    if cohort.k() < 1 {
        return Err(ReclError::invalid("cohort has no arms"));
    }
    let problem = Problem::new(cohort);
    let dim = problem.dim();
    let mut theta = vec![0.0; dim];
    let mut current = problem
        .evaluate(&theta)
        .ok_or_else(|| ReclError::invalid("non-finite rate model at θ = 0"))?;
    check_rank(&current.info, cohort)?;

    let mut iterations = 0;
    loop {
        let norm = inf_norm(&current.score);
        if norm < config.tol {
            break;
        }
        if iterations >= config.max_iter {
            return Err(ReclError::NonConvergence {
                what: "rate model",
                iterations,
                norm,
            });
        }
        iterations += 1;
        let step = newton_step(&current.info, &current.score)
            .ok_or_else(|| ReclError::RankDeficient("singular information matrix".into()))?;
        let slack = 1e-12 * current.loglik.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            if let Some(ev) = problem.evaluate(&trial) {
                if ev.loglik >= current.loglik - slack {
                    accepted = Some((trial, ev));
                    break;
                }
            }
            scale *= 0.5;
        }
        let (trial, ev) = accepted.ok_or(ReclError::NonConvergence {
            what: "rate model step-halving",
            iterations,
            norm,
        })?;
        theta = trial;
        current = ev;
    }

    let jumps: Vec<f64> = problem
        .table
        .events
        .iter()
        .zip(&current.s0)
        .map(|(&d, &s0)| d as f64 / s0)
        .collect();
    let baseline = StepFunction::from_jumps(problem.table.times.clone(), &jumps);
    Ok(SmrFit {
        score_norm: inf_norm(&current.score),
        theta,
        baseline,
        p: cohort.p(),
        k: cohort.k(),
        iterations,
    })
}

fn check_rank(info: &DMatrix<f64>, cohort: &Cohort) -> Result<()> {
    if info.nrows() == 0 {
        return Ok(());
    }
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if max == 0.0 || min <= 1e-10 * max {
        let (i, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let v = eig.eigenvectors.column(i);
        let (j, _) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let names = SmrFit {
            theta: Vec::new(),
            baseline: StepFunction::zero(),
            p: cohort.p(),
            k: cohort.k(),
            iterations: 0,
            score_norm: 0.0,
        }
        .coefficient_names(cohort.covariate_names());
        return Err(ReclError::RankDeficient(format!(
            "no variation on the risk sets along {}",
            names[j]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Subject;

    #[test]
    fn design_examples() {
        assert_eq!(build_design(&[0.5], 0, 2), vec![0.5, 0.0, 0.0]);
        assert_eq!(build_design(&[0.5], 1, 2), vec![0.5, 1.0, 0.5]);
        assert_eq!(
            build_design(&[1.0, 2.0], 2, 3),
            vec![1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0]
        );
        assert_eq!(design_dim(2, 3), 8);
    }

    fn small_cohort(extra_constant: bool) -> Cohort {
        let rows = [
            (0.3, 0, vec![0.5, 1.2], 3.0),
            (-1.0, 1, vec![2.0], 3.5),
            (0.8, 1, vec![0.2, 0.9, 2.2], 4.0),
            (-0.2, 0, vec![], 3.1),
            (1.5, 0, vec![1.7], 3.9),
            (-0.7, 1, vec![0.4, 3.3], 3.6),
        ];
        let subjects = rows
            .iter()
            .enumerate()
            .map(|(i, (x, a, ev, c))| {
                let mut cov = vec![*x];
                if extra_constant {
                    cov.push(1.0);
                }
                Subject::new(format!("s{i}"), cov, *a, ev.clone(), *c).unwrap()
            })
            .collect();
        Cohort::new(subjects, if extra_constant { 2 } else { 1 }, 2, None).unwrap()
    }

    #[test]
    fn score_vanishes_at_fit() {
        let fit = fit_smr(&small_cohort(false), &SmrConfig::default()).unwrap();
        assert!(fit.score_norm < 1e-8);
        assert!(fit.theta.iter().all(|v| v.is_finite()));
        let b = fit.baseline.values();
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
        assert!(b[0] > 0.0);
    }

    #[test]
    fn constant_covariate_is_rank_deficient() {
        let err = fit_smr(&small_cohort(true), &SmrConfig::default()).unwrap_err();
        assert!(matches!(err, ReclError::RankDeficient(_)), "{err}");
    }

    #[test]
    fn no_events_is_an_error() {
        let subjects = vec![
            Subject::new("a", vec![1.0], 0, vec![], 1.0).unwrap(),
            Subject::new("b", vec![2.0], 1, vec![], 2.0).unwrap(),
        ];
        let cohort = Cohort::new(subjects, 1, 2, None).unwrap();
        assert!(matches!(
            fit_smr(&cohort, &SmrConfig::default()),
            Err(ReclError::NoEvents)
        ));
    }

    #[test]
    fn null_coefficients_predict_baseline() {
        let baseline = StepFunction::new(vec![1.0, 2.0], vec![0.5, 1.25]).unwrap();
        let fit = SmrFit {
            theta: vec![0.0; 3],
            baseline: baseline.clone(),
            p: 1,
            k: 2,
            iterations: 0,
            score_norm: 0.0,
        };
        for a in 0..2 {
            for x in [-1.0, 0.0, 2.0] {
                assert_eq!(fit.predict_mean(&[x], a, 1.5), baseline.eval(1.5));
            }
        }
        assert_eq!(fit.predict_mean(&[1.0], 1, 0.5), 0.0);
    }

    #[test]
    fn arm_ratio_at_origin_is_exp_of_arm_intercept() {
        let fit = fit_smr(&small_cohort(false), &SmrConfig::default()).unwrap();
        let t = 3.0;
        let ratio = fit.predict_mean(&[0.0], 1, t) / fit.predict_mean(&[0.0], 0, t);
        assert!((ratio - fit.theta[1].exp()).abs() < 1e-12);
    }
}
