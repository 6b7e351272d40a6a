//! Misclassification costs.
//!
//! Each method yields one signal per (subject, arm), an estimate of the
//! expected count under that arm:
//!
//! - outcome regression: `μ̂*(t, x, a)`
//! - inverse weighting: `I(A = a) Λ̂ᵢ(t) / π̂(a, x)`
//! - augmented: `I(A = a) Λ̂ᵢ(t) / π̂(a, x) + [1 − I(A = a) / π̂(a, x)] μ̂*(t, x, a)`
//!
//! Costs are the signals shifted by their row minimum, and the best label is
//! the row argmin (smallest arm index on ties).

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{ReclError, Result};
use crate::propensity::PsModel;
use crate::smr::SmrFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OR")]
    OutcomeRegression,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "AIPW")]
    Aipw,
}

impl Method {
    pub fn needs_outcome_model(self) -> bool {
        matches!(self, Method::OutcomeRegression | Method::Aipw)
    }

    pub fn needs_propensity(self) -> bool {
        matches!(self, Method::Ipw | Method::Aipw)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::OutcomeRegression => "OR",
            Method::Ipw => "IPW",
            Method::Aipw => "AIPW",
        })
    }
}

impl FromStr for Method {
    type Err = ReclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OR" | "SMR" => Ok(Method::OutcomeRegression),
            "IPW" => Ok(Method::Ipw),
            "AIPW" => Ok(Method::Aipw),
            other => Err(ReclError::invalid(format!("unknown method {other:?}"))),
        }
    }
}

pub fn arm_signal_or(fit: &SmrFit, x: &[f64], a: usize, t: f64) -> f64 {
    fit.predict_mean(x, a, t)
}

/// `I(a_obs = a) · po / π̂(a)`; `ps_a` is the (clipped) propensity of arm `a`.
pub fn arm_signal_ipw(po: f64, a_obs: usize, ps_a: f64, a: usize) -> f64 {
    if a == a_obs {
        po / ps_a
    } else {
        0.0
    }
}

/// `I(a_obs = a) · po / π̂(a) + [1 − I(a_obs = a) / π̂(a)] · μ̂*`.
pub fn arm_signal_aipw(po: f64, a_obs: usize, ps_a: f64, mean_a: f64, a: usize) -> f64 {
    if a == a_obs {
        po / ps_a + (1.0 - 1.0 / ps_a) * mean_a
    } else {
        mean_a
    }
}

/// Nuisance inputs for [`cost_matrix`]; which ones are needed depends on the
/// method.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostInputs<'a> {
    pub fit: Option<&'a SmrFit>,
    pub ps: Option<&'a PsModel>,
    pub pseudo_obs: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub horizon: f64,
    pub method: Method,
    pub ids: Vec<String>,
    /// n × K, every row has minimum exactly 0 at `best_label`
    pub costs: Vec<Vec<f64>>,
    pub best_label: Vec<usize>,
    pub raw_signals: Vec<Vec<f64>>,
}

impl CostMatrix {
    /// Shifts each signal row by its minimum; ties go to the smallest arm.
    pub fn from_signals(
        horizon: f64,
        method: Method,
        ids: Vec<String>,
        signals: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if ids.len() != signals.len() {
            return Err(ReclError::invalid("one signal row per subject required"));
        }
        let k = signals.first().map_or(2, Vec::len);
        if k < 2 || signals.iter().any(|r| r.len() != k) {
            return Err(ReclError::invalid("signal rows need a common width of at least 2"));
        }
        if signals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ReclError::invalid("non-finite arm signal"));
        }
        let mut costs = Vec::with_capacity(signals.len());
        let mut best_label = Vec::with_capacity(signals.len());
        for row in &signals {
            let best = argmin(row);
            let m = row[best];
            costs.push(row.iter().map(|v| v - m).collect());
            best_label.push(best);
        }
        Ok(CostMatrix {
            horizon,
            method,
            ids,
            costs,
            best_label,
            raw_signals: signals,
        })
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn k(&self) -> usize {
        self.costs.first().map_or(0, Vec::len)
    }

    /// `Σᵢ Ĉ^{g(Xᵢ)}` for a vector of assigned arms.
    pub fn objective(&self, assigned: &[usize]) -> f64 {
        self.costs.iter().zip(assigned).map(|(row, &g)| row[g]).sum()
    }

    /// `id,cost_0,…,cost_{K−1},best_label` audit table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for a in 0..self.k() {
            let _ = write!(out, ",cost_{a}");
        }
        out.push_str(",best_label\n");
        for ((id, row), best) in self.ids.iter().zip(&self.costs).zip(&self.best_label) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{best}");
        }
        out
    }
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = a;
        }
    }
    best
}

/// Per-subject, per-arm signals for `method` at horizon `t`.
pub fn arm_signals(cohort: &Cohort, method: Method, t: f64, inputs: &CostInputs<'_>) -> Result<Vec<Vec<f64>>> {
    let k = cohort.k();
    let fit = if method.needs_outcome_model() {
        Some(inputs.fit.ok_or(ReclError::MissingInput("outcome model"))?)
    } else {
        None
    };
    let (ps, po) = if method.needs_propensity() {
        let ps = inputs.ps.ok_or(ReclError::MissingInput("propensity"))?;
        let po = inputs
            .pseudo_obs
            .ok_or(ReclError::MissingInput("pseudo-observations"))?;
        if po.len() != cohort.len() {
            return Err(ReclError::invalid("one pseudo-observation per subject required"));
        }
        if ps.k != k {
            return Err(ReclError::invalid(format!(
                "propensity model has {} arms, cohort has {k}",
                ps.k
            )));
        }
        (Some(ps), Some(po))
    } else {
        (None, None)
    };

    cohort
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let probs = match ps {
                Some(ps) => Some(ps.subject_probabilities(s)?),
                None => None,
            };
            let row = (0..k)
                .map(|a| match method {
                    Method::OutcomeRegression => arm_signal_or(fit.unwrap(), &s.covariates, a, t),
                    Method::Ipw => {
                        arm_signal_ipw(po.unwrap()[i], s.treatment, probs.as_ref().unwrap()[a], a)
                    }
                    Method::Aipw => arm_signal_aipw(
                        po.unwrap()[i],
                        s.treatment,
                        probs.as_ref().unwrap()[a],
                        fit.unwrap().predict_mean(&s.covariates, a, t),
                        a,
                    ),
                })
                .collect();
            Ok(row)
        })
        .collect()
}

pub fn cost_matrix(cohort: &Cohort, method: Method, t: f64, inputs: &CostInputs<'_>) -> Result<CostMatrix> {
    let signals = arm_signals(cohort, method, t, inputs)?;
    let ids = cohort.subjects().iter().map(|s| s.id.clone()).collect();
    CostMatrix::from_signals(t, method, ids, signals)
}

/// Two-arm contrast `C = signal(1) − signal(0)` and label `W = I(C < 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryContrast {
    pub contrast: Vec<f64>,
    pub label: Vec<usize>,
}

impl BinaryContrast {
    pub fn weights(&self) -> Vec<f64> {
        self.contrast.iter().map(|c| c.abs()).collect()
    }
}

pub fn binary_contrast(cohort: &Cohort, method: Method, t: f64, inputs: &CostInputs<'_>) -> Result<BinaryContrast> {
    if cohort.k() != 2 {
        return Err(ReclError::invalid(format!(
            "binary contrast needs two arms, cohort has {}",
            cohort.k()
        )));
    }
    let signals = arm_signals(cohort, method, t, inputs)?;
    let contrast: Vec<f64> = signals.iter().map(|r| r[1] - r[0]).collect();
    let label = contrast.iter().map(|&c| usize::from(c < 0.0)).collect();
    Ok(BinaryContrast { contrast, label })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipw_signal_plug_in() {
        assert_eq!(arm_signal_ipw(2.0, 1, 0.5, 1), 4.0);
        assert_eq!(arm_signal_ipw(2.0, 1, 0.5, 0), 0.0);
        assert_eq!(arm_signal_ipw(-0.5, 1, 0.25, 1), -2.0);
    }

    #[test]
    fn aipw_signal_plug_in() {
        assert_eq!(arm_signal_aipw(2.0, 1, 0.5, 0.7, 0), 0.7);
        assert_eq!(arm_signal_aipw(2.0, 1, 1.0, 0.7, 1), 2.0);
        assert_eq!(arm_signal_aipw(2.0, 1, 0.5, 1.0, 1), 3.0);
    }

    #[test]
    fn binary_signals_reconcile_with_label() {
        let cm = CostMatrix::from_signals(1.0, Method::OutcomeRegression, vec!["a".into()], vec![vec![1.0, 0.4]])
            .unwrap();
        assert!((cm.costs[0][0] - 0.6).abs() < 1e-15);
        assert_eq!(cm.costs[0][1], 0.0);
        assert_eq!(cm.best_label[0], 1);
    }

    #[test]
    fn sparse_ipw_row_breaks_ties_to_smallest_arm() {
        let cm = CostMatrix::from_signals(1.0, Method::Ipw, vec!["a".into()], vec![vec![0.0, 6.0, 0.0]]).unwrap();
        assert_eq!(cm.costs[0], vec![0.0, 6.0, 0.0]);
        assert_eq!(cm.best_label[0], 0);
    }

    #[test]
    fn shifting_a_row_changes_nothing() {
        let a = CostMatrix::from_signals(1.0, Method::Aipw, vec!["a".into()], vec![vec![0.3, -1.2, 2.0]]).unwrap();
        let b = CostMatrix::from_signals(1.0, Method::Aipw, vec!["a".into()], vec![vec![5.3, 3.8, 7.0]]).unwrap();
        assert_eq!(a.best_label, b.best_label);
        for (x, y) in a.costs[0].iter().zip(&b.costs[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(CostMatrix::from_signals(1.0, Method::Ipw, vec!["a".into()], vec![vec![1.0]]).is_err());
        assert!(CostMatrix::from_signals(1.0, Method::Ipw, vec!["a".into()], vec![vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("aipw".parse::<Method>().unwrap(), Method::Aipw);
        assert_eq!("SMR".parse::<Method>().unwrap(), Method::OutcomeRegression);
        assert!("foo".parse::<Method>().is_err());
        assert_eq!(Method::Ipw.to_string(), "IPW");
    }
}
