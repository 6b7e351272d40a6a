//! Propensity scores `π(a, x) = P(A = a | X = x)`.
//!
//! Binary logistic regression for two arms, multinomial logistic regression
//! with arm 0 as reference for more, or a table of externally estimated
//! probabilities keyed by subject id. Predictions used as inverse weights are
//! clipped to `[PS_CLIP, 1 − PS_CLIP]` and renormalised.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Subject};
use crate::error::{ReclError, Result};

pub const PS_CLIP: f64 = 1e-3;
const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 30.0;
const SEPARATION_RIDGE: f64 = 1e-6;

/// One regressor of the propensity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsTerm {
    Linear(usize),
    Exp(usize),
}

impl PsTerm {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            PsTerm::Linear(j) => x[j],
            PsTerm::Exp(j) => x[j].exp(),
        }
    }

    fn covariate(&self) -> usize {
        match *self {
            PsTerm::Linear(j) | PsTerm::Exp(j) => j,
        }
    }
}

/// Regressors of the propensity model; an intercept is always included.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PsFormula {
    pub terms: Vec<PsTerm>,
}

impl PsFormula {
    pub fn linear(covariates: &[usize]) -> Self {
        PsFormula {
            terms: covariates.iter().map(|&j| PsTerm::Linear(j)).collect(),
        }
    }

    pub fn all(p: usize) -> Self {
        PsFormula::linear(&(0..p).collect::<Vec<_>>())
    }

    /// Parses `"x1 + exp(x3)"`-style formulas against covariate names. `"."`
    /// selects every covariate linearly.
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let text = text.trim();
        if text == "." {
            return Ok(PsFormula::all(names.len()));
        }
        let lookup = |name: &str| {
            names
                .iter()
                .position(|n| n == name.trim())
                .ok_or_else(|| ReclError::invalid(format!("unknown covariate {name:?} in formula")))
        };
        let mut terms = Vec::new();
        for part in text.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            let term = match part.strip_prefix("exp(").and_then(|r| r.strip_suffix(')')) {
                Some(inner) => PsTerm::Exp(lookup(inner)?),
                None => PsTerm::Linear(lookup(part)?),
            };
            terms.push(term);
        }
        Ok(PsFormula { terms })
    }

    pub fn render(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "1".into();
        }
        self.terms
            .iter()
            .map(|t| match *t {
                PsTerm::Linear(j) => names[j].clone(),
                PsTerm::Exp(j) => format!("exp({})", names[j]),
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// `(1, f₁(x), …, f_q(x))`.
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.terms.len() + 1);
        r.push(1.0);
        r.extend(self.terms.iter().map(|t| t.value(x)));
        r
    }

    fn width(&self) -> usize {
        self.terms.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsKind {
    BinaryLogit,
    MultinomialLogit,
    ExternalTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsModel {
    pub kind: PsKind,
    pub k: usize,
    pub formula: PsFormula,
    /// Per-arm coefficients on the formula row; arm 0 is all zeros.
    pub coefficients: Vec<Vec<f64>>,
    pub table: Option<BTreeMap<String, Vec<f64>>>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

impl PsModel {
    /// Model with the given coefficients (row per arm, arm 0 first).
    pub fn from_coefficients(formula: PsFormula, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        let k = coefficients.len();
        if k < 2 {
            return Err(ReclError::invalid("a propensity model needs two or more arms"));
        }
        if coefficients.iter().any(|c| c.len() != formula.width()) {
            return Err(ReclError::invalid("coefficient rows do not match the formula"));
        }
        Ok(PsModel {
            kind: if k == 2 {
                PsKind::BinaryLogit
            } else {
                PsKind::MultinomialLogit
            },
            k,
            formula,
            coefficients,
            table: None,
            iterations: 0,
            gradient_norm: 0.0,
            warnings: Vec::new(),
        })
    }

    /// Softmax of the linear scores, before clipping.
    pub fn raw_probabilities(&self, x: &[f64]) -> Vec<f64> {
        let row = self.formula.row(x);
        let scores: Vec<f64> = self
            .coefficients
            .iter()
            .map(|c| c.iter().zip(&row).map(|(a, b)| a * b).sum())
            .collect();
        softmax(&scores)
    }

    /// Clipped and renormalised probabilities for covariates `x`. Only
    /// meaningful for parametric models.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        clip(self.raw_probabilities(x))
    }

    /// `π̂(a, x)` for a parametric model.
    pub fn predict_ps(&self, x: &[f64], a: usize) -> f64 {
        self.probabilities(x)[a]
    }

    /// Clipped probabilities for a cohort subject, looked up by id for
    /// table-backed models.
    pub fn subject_probabilities(&self, subject: &Subject) -> Result<Vec<f64>> {
        match &self.table {
            Some(table) => table
                .get(&subject.id)
                .map(|row| clip(row.clone()))
                .ok_or_else(|| ReclError::UnknownSubject(subject.id.clone())),
            None => Ok(self.probabilities(&subject.covariates)),
        }
    }

    /// `id,ps_0,…,ps_{K−1}` table of unclipped probabilities for every subject.
    pub fn to_table_csv(&self, cohort: &Cohort) -> Result<String> {
        let mut out = String::from("id");
        for a in 0..self.k {
            let _ = write!(out, ",ps_{a}");
        }
        out.push('\n');
        for s in cohort.subjects() {
            let row = match &self.table {
                Some(t) => t
                    .get(&s.id)
                    .cloned()
                    .ok_or_else(|| ReclError::UnknownSubject(s.id.clone()))?,
                None => self.raw_probabilities(&s.covariates),
            };
            out.push_str(&s.id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Multi-line description of the fitted model.
    pub fn summary(&self, names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind = {:?}", self.kind);
        if self.kind != PsKind::ExternalTable {
            let _ = writeln!(out, "formula = {}", self.formula.render(names));
            let _ = writeln!(out, "iterations = {}", self.iterations);
            let _ = writeln!(out, "gradient_norm = {:e}", self.gradient_norm);
            for (a, c) in self.coefficients.iter().enumerate().skip(1) {
                let coefs: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "arm{a} = {}", coefs.join(" "));
            }
        }
        let _ = writeln!(out, "clip = {PS_CLIP}");
        for w in &self.warnings {
            let _ = writeln!(out, "warning = {w}");
        }
        out
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn clip(mut p: Vec<f64>) -> Vec<f64> {
    for v in p.iter_mut() {
        *v = v.clamp(PS_CLIP, 1.0 - PS_CLIP);
    }
    let z: f64 = p.iter().sum();
    p.into_iter().map(|v| v / z).collect()
}

fn check_formula(formula: &PsFormula, p: usize) -> Result<()> {
    if let Some(t) = formula.terms.iter().find(|t| t.covariate() >= p) {
        return Err(ReclError::invalid(format!(
            "formula term {t:?} refers to a covariate beyond dimension {p}"
        )));
    }
    Ok(())
}

/// Maximum-likelihood logit fit: binary for two arms, multinomial otherwise.
pub fn fit_propensity(cohort: &Cohort, formula: &PsFormula) -> Result<PsModel> {
    if cohort.k() == 2 {
        fit_binary_logit(cohort, formula)
    } else {
        fit_multinomial_logit(cohort, formula)
    }
}

fn present_arms(cohort: &Cohort) -> Result<()> {
    let present = cohort.arm_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(ReclError::invalid(
            "propensity model needs at least two observed arms",
        ));
    }
    Ok(())
}

/// Binary logistic regression of `I(A = 1)` by Newton-Raphson (IRLS).
pub fn fit_binary_logit(cohort: &Cohort, formula: &PsFormula) -> Result<PsModel> {
    if cohort.k() != 2 {
        return Err(ReclError::invalid("binary logit needs exactly two arms"));
    }
    present_arms(cohort)?;
    check_formula(formula, cohort.p())?;
    let rows: Vec<Vec<f64>> = cohort
        .subjects()
        .iter()
        .map(|s| formula.row(&s.covariates))
        .collect();
    let y: Vec<f64> = cohort.subjects().iter().map(|s| s.treatment as f64).collect();
    let m = formula.width();

    let objective = |beta: &[f64], ridge: f64| -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut ll = 0.0;
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (r, &yi) in rows.iter().zip(&y) {
            let eta: f64 = beta.iter().zip(r).map(|(b, v)| b * v).sum();
            // log(1 + e^η) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += yi * eta - softplus;
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            for a in 0..m {
                grad[a] += (yi - p) * r[a];
                for b in 0..m {
                    hess[(a, b)] += w * r[a] * r[b];
                }
            }
        }
        penalise(beta, ridge, &mut ll, &mut grad, &mut hess);
        (ll, grad, hess)
    };
    let (beta, iterations, gradient_norm, warnings) = newton_with_separation(m, objective)?;
    let mut model = PsModel::from_coefficients(formula.clone(), vec![vec![0.0; m], beta])?;
    model.kind = PsKind::BinaryLogit;
    model.iterations = iterations;
    model.gradient_norm = gradient_norm;
    model.warnings = warnings;
    Ok(model)
}

/// Multinomial logistic regression with arm 0 as reference.
pub fn fit_multinomial_logit(cohort: &Cohort, formula: &PsFormula) -> Result<PsModel> {
    let k = cohort.k();
    if k < 2 {
        return Err(ReclError::invalid("propensity model needs at least two arms"));
    }
    present_arms(cohort)?;
    check_formula(formula, cohort.p())?;
    let rows: Vec<Vec<f64>> = cohort
        .subjects()
        .iter()
        .map(|s| formula.row(&s.covariates))
        .collect();
    let arms = cohort.treatments();
    let m = formula.width();
    let dim = (k - 1) * m;

    let objective = |beta: &[f64], ridge: f64| -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut ll = 0.0;
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut scores = vec![0.0; k];
        for (r, &ai) in rows.iter().zip(&arms) {
            for j in 1..k {
                scores[j] = beta[(j - 1) * m..j * m]
                    .iter()
                    .zip(r)
                    .map(|(b, v)| b * v)
                    .sum();
            }
            let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
            ll += scores[ai] - lse;
            let p: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
            for j in 1..k {
                let resid = f64::from(u8::from(ai == j)) - p[j];
                for a in 0..m {
                    grad[(j - 1) * m + a] += resid * r[a];
                }
                for l in 1..k {
                    let w = p[j] * (f64::from(u8::from(j == l)) - p[l]);
                    for a in 0..m {
                        for b in 0..m {
                            hess[((j - 1) * m + a, (l - 1) * m + b)] += w * r[a] * r[b];
                        }
                    }
                }
            }
        }
        penalise(beta, ridge, &mut ll, &mut grad, &mut hess);
        (ll, grad, hess)
    };
    let (beta, iterations, gradient_norm, warnings) = newton_with_separation(dim, objective)?;
    let mut coefficients = vec![vec![0.0; m]];
    coefficients.extend(beta.chunks(m).map(<[f64]>::to_vec));
    let mut model = PsModel::from_coefficients(formula.clone(), coefficients)?;
    model.kind = PsKind::MultinomialLogit;
    model.iterations = iterations;
    model.gradient_norm = gradient_norm;
    model.warnings = warnings;
    Ok(model)
}

fn penalise(beta: &[f64], ridge: f64, ll: &mut f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
    if ridge == 0.0 {
        return;
    }
    for (a, b) in beta.iter().enumerate() {
        *ll -= 0.5 * ridge * b * b;
        grad[a] -= ridge * b;
        hess[(a, a)] += ridge;
    }
}

type Objective<'a> = dyn Fn(&[f64], f64) -> (f64, DVector<f64>, DMatrix<f64>) + 'a;

/// Runs Newton without penalty; if the coefficients diverge (norm above
/// `SEPARATION_NORM`) restarts with a small ridge and records a warning.
fn newton_with_separation(
    dim: usize,
    objective: impl Fn(&[f64], f64) -> (f64, DVector<f64>, DMatrix<f64>),
) -> Result<(Vec<f64>, usize, f64, Vec<String>)> {
    match newton(dim, &objective, 0.0)? {
        Some((beta, it, g)) => Ok((beta, it, g, Vec::new())),
        None => {
            let (beta, it, g) = newton(dim, &objective, SEPARATION_RIDGE)?.ok_or(
                ReclError::NonConvergence {
                    what: "ridge-penalised propensity model",
                    iterations: MAX_ITER,
                    norm: f64::NAN,
                },
            )?;
            Ok((
                beta,
                it,
                g,
                vec![format!(
                    "separation detected: coefficients diverged, refitted with ridge {SEPARATION_RIDGE}"
                )],
            ))
        }
    }
}

/// Returns `None` when separation is detected (only without ridge).
fn newton(dim: usize, objective: &Objective<'_>, ridge: f64) -> Result<Option<(Vec<f64>, usize, f64)>> {
    let mut beta = vec![0.0; dim];
    let (mut ll, mut grad, mut hess) = objective(&beta, ridge);
    for it in 0..=MAX_ITER {
        let norm = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if norm < GRAD_TOL {
            return Ok(Some((beta, it, norm)));
        }
        if it == MAX_ITER {
            return Err(ReclError::NonConvergence {
                what: "propensity model",
                iterations: it,
                norm,
            });
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| hess.clone().lu().solve(&grad));
        let Some(step) = step else {
            if ridge == 0.0 {
                return Ok(None);
            }
            return Err(ReclError::RankDeficient(
                "singular propensity information matrix".into(),
            ));
        };
        let slack = 1e-12 * ll.abs().max(1.0);
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (tll, tg, th) = objective(&trial, ridge);
            if tll.is_finite() && tll >= ll - slack {
                beta = trial;
                ll = tll;
                grad = tg;
                hess = th;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            return Err(ReclError::NonConvergence {
                what: "propensity step-halving",
                iterations: it,
                norm,
            });
        }
        if ridge == 0.0 && beta.iter().map(|b| b * b).sum::<f64>().sqrt() > SEPARATION_NORM {
            return Ok(None);
        }
    }
    unreachable!()
}

/// Loads an `id,ps_0,…,ps_{K−1}` table of externally estimated propensities.
pub fn load_external_ps(text: &str) -> Result<PsModel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(ReclError::invalid("propensity table must start with an id column"));
    }
    let k = headers.len() - 1;
    for (a, h) in headers.iter().skip(1).enumerate() {
        if h != format!("ps_{a}") {
            return Err(ReclError::invalid(format!(
                "propensity column {} should be ps_{a}, found {h:?}",
                a + 1
            )));
        }
    }
    if k < 2 {
        return Err(ReclError::invalid("propensity table needs at least two arms"));
    }
    let mut table = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let probs = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| ReclError::Parse {
                    line,
                    message: format!("non-numeric probability {v:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(ReclError::Parse {
                line,
                message: "probabilities must lie strictly between 0 and 1".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ReclError::Parse {
                line,
                message: format!("probabilities sum to {sum}, not 1"),
            });
        }
        table.insert(record[0].to_string(), probs);
    }
    Ok(PsModel {
        kind: PsKind::ExternalTable,
        k,
        formula: PsFormula::default(),
        coefficients: Vec::new(),
        table: Some(table),
        iterations: 0,
        gradient_norm: 0.0,
        warnings: Vec::new(),
    })
}
