//! Cumulative rate functions.
//!
//! Nelson-Aalen estimation of the marginal mean count `Λ(t)` and its
//! jackknife pseudo-observations `Λ̂ᵢ(t) = n·Λ̂(t) − (n−1)·Λ̂⁻ⁱ(t)`, which act as
//! per-subject outcomes under independent censoring.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Subject};
use crate::error::{ReclError, Result};

/// Right-continuous, piecewise-constant, nondecreasing function that is zero
/// before its first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(ReclError::invalid("knots and values differ in length"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReclError::invalid("knots must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] > w[1]) {
            return Err(ReclError::invalid("values must be finite and nondecreasing"));
        }
        Ok(StepFunction { knots, values })
    }

    pub fn zero() -> Self {
        StepFunction {
            knots: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from jump sizes at strictly increasing knots.
    pub(crate) fn from_jumps(knots: Vec<f64>, jumps: &[f64]) -> Self {
        let mut acc = 0.0;
        let values = jumps
            .iter()
            .map(|j| {
                acc += j;
                acc
            })
            .collect();
        StepFunction { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k <= t) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    pub fn sample(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }

    /// Two-column `time,value` CSV of the knots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,value\n");
        for (t, v) in self.knots.iter().zip(&self.values) {
            let _ = writeln!(out, "{t},{v}");
        }
        out
    }

    /// `time,value` CSV of the function sampled on `grid`.
    pub fn grid_csv(&self, grid: &[f64]) -> String {
        let mut out = String::from("time,value\n");
        for &t in grid {
            let _ = writeln!(out, "{t},{}", self.eval(t));
        }
        out
    }
}

/// Distinct event times with event counts `d(s)` and risk-set sizes
/// `R(s) = #{j : C_j >= s}`.
#[derive(Debug, Clone)]
pub(crate) struct EventTable {
    pub times: Vec<f64>,
    pub events: Vec<usize>,
    pub at_risk: Vec<usize>,
}

impl EventTable {
    pub fn build<'a>(subjects: impl IntoIterator<Item = &'a Subject>) -> Self {
        let mut all_events = Vec::new();
        let mut censor = Vec::new();
        for s in subjects {
            all_events.extend_from_slice(s.event_times());
            censor.push(s.censor_time());
        }
        all_events.sort_by(f64::total_cmp);
        censor.sort_by(f64::total_cmp);
        let mut times: Vec<f64> = Vec::new();
        let mut events: Vec<usize> = Vec::new();
        for e in all_events {
            if times.last() == Some(&e) {
                *events.last_mut().unwrap() += 1;
            } else {
                times.push(e);
                events.push(1);
            }
        }
        let n = censor.len();
        let at_risk = times
            .iter()
            .map(|&s| n - censor.partition_point(|&c| c < s))
            .collect();
        EventTable {
            times,
            events,
            at_risk,
        }
    }
}

/// Nelson-Aalen estimator `Λ̂(t) = Σ_{s<=t} d(s) / R(s)`.
pub fn nelson_aalen(cohort: &Cohort) -> Result<StepFunction> {
    if cohort.is_empty() {
        return Err(ReclError::EmptyGroup("cohort has no subjects".into()));
    }
    Ok(nelson_aalen_of(cohort.subjects()))
}

fn nelson_aalen_of<'a>(subjects: impl IntoIterator<Item = &'a Subject>) -> StepFunction {
    let table = EventTable::build(subjects);
    let jumps: Vec<f64> = table
        .events
        .iter()
        .zip(&table.at_risk)
        .map(|(&d, &r)| d as f64 / r as f64)
        .collect();
    StepFunction::from_jumps(table.times, &jumps)
}

/// Nelson-Aalen curve restricted to the subjects whose ids are in `members`.
pub fn group_crf(cohort: &Cohort, members: &HashSet<String>) -> Result<StepFunction> {
    let group: Vec<&Subject> = cohort
        .subjects()
        .iter()
        .filter(|s| members.contains(&s.id))
        .collect();
    if group.is_empty() {
        return Err(ReclError::EmptyGroup("no cohort subject in the requested group".into()));
    }
    Ok(nelson_aalen_of(group))
}

/// Jackknife pseudo-observations of the Nelson-Aalen estimator at `t`.
///
/// Uses the leave-one-out identity
/// `Λ̂⁻ⁱ(t) = Σ_{s<=t} (d(s) − dNᵢ(s)) / (R(s) − Yᵢ(s))`, evaluated with prefix
/// sums over the distinct event times so that no estimator is refitted. A
/// leave-one-out risk set of size zero contributes nothing when it carries
/// no events.
pub fn pseudo_observations(cohort: &Cohort, t: f64) -> Result<Vec<f64>> {
    Ok(pseudo_observations_grid(cohort, &[t])?.remove(0))
}

/// Pseudo-observations at each time in `grid`, sharing one pass over the
/// event table. Returns one length-n vector per grid point.
pub fn pseudo_observations_grid(cohort: &Cohort, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = cohort.len();
    if n < 2 {
        return Err(ReclError::invalid(
            "pseudo-observations need at least two subjects",
        ));
    }
    if let Some(&t) = grid.iter().find(|&&t| t <= 0.0 || !t.is_finite()) {
        return Err(ReclError::invalid(format!("horizon {t} must be positive")));
    }
    let table = EventTable::build(cohort.subjects());
    let m = table.times.len();

    // full[j]: Σ_{l<j} d/R ; loo[j]: Σ_{l<j} d/(R−1) over knots with R > 1
    let mut full = Vec::with_capacity(m + 1);
    let mut loo = Vec::with_capacity(m + 1);
    full.push(0.0);
    loo.push(0.0);
    for j in 0..m {
        let d = table.events[j] as f64;
        let r = table.at_risk[j];
        full.push(full[j] + d / r as f64);
        let step = if r > 1 { d / (r - 1) as f64 } else { 0.0 };
        loo.push(loo[j] + step);
    }

    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let upto_t = table.times.partition_point(|&s| s <= t);
        let na_t = full[upto_t];
        let mut pos = Vec::with_capacity(n);
        for s in cohort.subjects() {
            let c = s.censor_time();
            let upto_c = table.times.partition_point(|&x| x <= c).min(upto_t);
            let mut minus_i = loo[upto_c] + (full[upto_t] - full[upto_c]);
            for &e in s.event_times() {
                if e > t {
                    break;
                }
                let j = table.times.partition_point(|&x| x < e);
                let r = table.at_risk[j];
                if r > 1 {
                    minus_i -= 1.0 / (r - 1) as f64;
                } else if table.events[j] > 1 {
                    return Err(ReclError::DegenerateLeaveOneOut {
                        subject: s.id.clone(),
                        time: e,
                    });
                }
            }
            pos.push(n as f64 * na_t - (n - 1) as f64 * minus_i);
        }
        out.push(pos);
    }
    Ok(out)
}

/// Pseudo-observations obtained by literally refitting the estimator without
/// each subject. Quadratic cost; kept as a reference path for verification.
pub fn pseudo_observations_naive(cohort: &Cohort, t: f64) -> Result<Vec<f64>> {
    let n = cohort.len();
    if n < 2 {
        return Err(ReclError::invalid(
            "pseudo-observations need at least two subjects",
        ));
    }
    let subjects = cohort.subjects();
    let full = nelson_aalen_of(subjects).eval(t);
    Ok((0..n)
        .map(|i| {
            let loo = nelson_aalen_of(
                subjects
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| s),
            )
            .eval(t);
            n as f64 * full - (n - 1) as f64 * loo
        })
        .collect())
}

/// Jackknife pseudo-observations of the Kaplan-Meier probability of having
/// experienced a first event by `t`, `F̂(t) = 1 − Ŝ(t)`. Each subject is
/// followed until its first event or censoring, whichever comes first.
pub fn first_event_pseudo_observations(cohort: &Cohort, t: f64) -> Result<Vec<f64>> {
    let n = cohort.len();
    if n < 2 {
        return Err(ReclError::invalid(
            "pseudo-observations need at least two subjects",
        ));
    }
    // (observed time, had first event)
    let obs: Vec<(f64, bool)> = cohort
        .subjects()
        .iter()
        .map(|s| match s.first_event() {
            Some(e) => (e, true),
            None => (s.censor_time(), false),
        })
        .collect();
    let mut times: Vec<f64> = obs
        .iter()
        .filter(|(x, d)| *d && *x <= t)
        .map(|(x, _)| *x)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut exits: Vec<f64> = obs.iter().map(|(x, _)| *x).collect();
    exits.sort_by(f64::total_cmp);
    let events_at: Vec<usize> = times
        .iter()
        .map(|&s| obs.iter().filter(|(x, d)| *d && *x == s).count())
        .collect();
    let risk_at: Vec<usize> = times
        .iter()
        .map(|&s| n - exits.partition_point(|&x| x < s))
        .collect();

    let cdf = |skip: Option<usize>| -> f64 {
        let mut surv = 1.0;
        for (j, &s) in times.iter().enumerate() {
            let (mut d, mut r) = (events_at[j], risk_at[j]);
            if let Some(i) = skip {
                let (x, ev) = obs[i];
                if x >= s {
                    r -= 1;
                }
                if ev && x == s {
                    d -= 1;
                }
            }
            if r > 0 {
                surv *= 1.0 - d as f64 / r as f64;
            }
        }
        1.0 - surv
    };
    let full = cdf(None);
    Ok((0..n)
        .map(|i| n as f64 * full - (n - 1) as f64 * cdf(Some(i)))
        .collect())
}
