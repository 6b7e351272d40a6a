//! Observed recurrent-event data.
//!
//! A [`Cohort`] holds one [`Subject`] per individual: a covariate vector, the
//! arm actually received (as a 0-based index), the sorted times of every
//! observed recurrence and the right-censoring time `C`. The counting process
//! `N(t)` and the at-risk indicator `Y(t) = I(C >= t)` are derived from these.
//!
//! Files use a long format: one row per recurrence (`status = 1`) plus exactly
//! one censoring row (`status = 0`) per subject, whose time is `C`.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{ReclError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub covariates: Vec<f64>,
    pub treatment: usize,
    event_times: Vec<f64>,
    censor_time: f64,
}

impl Subject {
    /// Builds a subject, checking `0 < e <= C` and strictly increasing event
    /// times.
    pub fn new(
        id: impl Into<String>,
        covariates: Vec<f64>,
        treatment: usize,
        event_times: Vec<f64>,
        censor_time: f64,
    ) -> Result<Self> {
        let id = id.into();
        if !censor_time.is_finite() || censor_time < 0.0 {
            return Err(ReclError::invalid(format!(
                "subject {id}: censoring time {censor_time} must be finite and nonnegative"
            )));
        }
        if let Some(bad) = covariates.iter().find(|v| !v.is_finite()) {
            return Err(ReclError::invalid(format!(
                "subject {id}: non-finite covariate {bad}"
            )));
        }
        for (j, &e) in event_times.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 {
                return Err(ReclError::invalid(format!(
                    "subject {id}: event time {e} must be positive"
                )));
            }
            if e > censor_time {
                return Err(ReclError::invalid(format!(
                    "subject {id}: event at {e} after censoring at {censor_time}"
                )));
            }
            if j > 0 && event_times[j - 1] >= e {
                return Err(ReclError::invalid(format!(
                    "subject {id}: event times must be strictly increasing (duplicate or unsorted at {e})"
                )));
            }
        }
        Ok(Subject {
            id,
            covariates,
            treatment,
            event_times,
            censor_time,
        })
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn censor_time(&self) -> f64 {
        self.censor_time
    }

    pub fn n_events(&self) -> usize {
        self.event_times.len()
    }

    /// Observed count `N(min(t, C))`; events exactly at `t` are counted.
    pub fn count_at(&self, t: f64) -> usize {
        let horizon = t.min(self.censor_time);
        self.event_times.partition_point(|&e| e <= horizon)
    }

    /// `Y(t) = I(C >= t)`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.censor_time >= t
    }

    /// Time of the first event if one was observed.
    pub fn first_event(&self) -> Option<f64> {
        self.event_times.first().copied()
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    subjects: Vec<Subject>,
    p: usize,
    k: usize,
    tau: f64,
    covariate_names: Vec<String>,
    arm_labels: Vec<String>,
    warnings: Vec<String>,
}

impl Cohort {
    /// Validates a set of subjects against a declared covariate dimension `p`
    /// and arm count `k`. When `tau` is `None` the largest censoring time is
    /// used.
    pub fn new(subjects: Vec<Subject>, p: usize, k: usize, tau: Option<f64>) -> Result<Self> {
        if k == 0 {
            return Err(ReclError::invalid("number of arms must be positive"));
        }
        let max_c = subjects
            .iter()
            .map(|s| s.censor_time)
            .fold(0.0_f64, f64::max);
        let tau = tau.unwrap_or(max_c);
        let mut seen = HashMap::with_capacity(subjects.len());
        for s in &subjects {
            if s.covariates.len() != p {
                return Err(ReclError::invalid(format!(
                    "subject {}: expected {p} covariates, found {}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if s.treatment >= k {
                return Err(ReclError::invalid(format!(
                    "subject {}: treatment index {} outside 0..{k}",
                    s.id, s.treatment
                )));
            }
            if s.censor_time > tau {
                return Err(ReclError::invalid(format!(
                    "subject {}: censoring time {} exceeds follow-up {tau}",
                    s.id, s.censor_time
                )));
            }
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(ReclError::invalid(format!("duplicate subject id {}", s.id)));
            }
        }
        drop(seen);

        let mut warnings = Vec::new();
        let counts = arm_counts(&subjects, k);
        for (arm, &c) in counts.iter().enumerate() {
            if c == 0 {
                warnings.push(format!("arm {arm} has no subjects"));
            }
        }
        Ok(Cohort {
            subjects,
            p,
            k,
            tau,
            covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
            arm_labels: (0..k).map(|a| a.to_string()).collect(),
            warnings,
        })
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(ReclError::invalid(format!(
                "{} covariate names for dimension {}",
                names.len(),
                self.p
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn with_arm_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.k {
            return Err(ReclError::invalid(format!(
                "{} arm labels for {} arms",
                labels.len(),
                self.k
            )));
        }
        self.arm_labels = labels;
        Ok(self)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Raw treatment labels, indexed by the internal arm index.
    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        arm_counts(&self.subjects, self.k)
    }

    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.covariates.clone()).collect()
    }

    pub fn treatments(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.treatment).collect()
    }

    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(Subject::n_events).sum()
    }

    /// Number of subjects with `C >= t`.
    pub fn n_at_risk(&self, t: f64) -> usize {
        self.subjects.iter().filter(|s| s.at_risk(t)).count()
    }

    /// Sub-cohort of the subjects whose ids satisfy `keep`; dimensions, labels
    /// and follow-up are inherited.
    pub fn filter(&self, mut keep: impl FnMut(&Subject) -> bool) -> Cohort {
        let subjects: Vec<Subject> = self.subjects.iter().filter(|s| keep(s)).cloned().collect();
        Cohort {
            warnings: Vec::new(),
            subjects,
            p: self.p,
            k: self.k,
            tau: self.tau,
            covariate_names: self.covariate_names.clone(),
            arm_labels: self.arm_labels.clone(),
        }
    }

    /// Writes the long-format CSV read by [`parse_cohort`] with the default
    /// schema. Treatments are written as their raw labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,time,status,treatment");
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for s in &self.subjects {
            let tail: String = s.covariates.iter().fold(String::new(), |mut acc, v| {
                let _ = write!(acc, ",{v}");
                acc
            });
            let label = &self.arm_labels[s.treatment];
            for e in &s.event_times {
                let _ = writeln!(out, "{},{e},1,{label}{tail}", s.id);
            }
            let _ = writeln!(out, "{},{},0,{label}{tail}", s.id, s.censor_time);
        }
        out
    }
}

fn arm_counts(subjects: &[Subject], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for s in subjects {
        if s.treatment < k {
            counts[s.treatment] += 1;
        }
    }
    counts
}

/// Column mapping for long-format cohort files.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSchema {
    pub id: String,
    pub time: String,
    pub status: String,
    pub treatment: String,
    /// Covariate columns in order; `None` takes every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for CohortSchema {
    fn default() -> Self {
        CohortSchema {
            id: "id".into(),
            time: "time".into(),
            status: "status".into(),
            treatment: "treatment".into(),
            covariates: None,
        }
    }
}

struct Pending {
    line: usize,
    treatment: String,
    covariates: Vec<f64>,
    events: Vec<f64>,
    censor: Option<f64>,
}

fn parse_number(field: &str, what: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| ReclError::Parse {
        line,
        message: format!("non-numeric {what} {field:?}"),
    })
}

/// Orders raw treatment labels ascending: numerically when every label is a
/// number, lexicographically otherwise.
pub fn sort_arm_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let x: f64 = a.trim().parse().unwrap();
            let y: f64 = b.trim().parse().unwrap();
            x.total_cmp(&y)
        }),
        None => labels.sort(),
    }
}

/// Reads a long-format cohort CSV (UTF-8, comma separated, header required).
///
/// Treatment labels are re-coded to contiguous indices in ascending label
/// order; the mapping is kept in [`Cohort::arm_labels`].
pub fn parse_cohort(text: &str, schema: &CohortSchema) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReclError::invalid(format!("missing column {name:?}")))
    };
    let id_col = column(&schema.id)?;
    let time_col = column(&schema.time)?;
    let status_col = column(&schema.status)?;
    let treat_col = column(&schema.treatment)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![id_col, time_col, status_col, treat_col].contains(j))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols: Vec<usize> = cov_names.iter().map(|n| column(n)).collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = row + 2;
        let id = record[id_col].to_string();
        let time = parse_number(&record[time_col], "time", line)?;
        let status = match record[status_col].trim() {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(ReclError::Parse {
                    line,
                    message: format!("status must be 0 or 1, found {other:?}"),
                })
            }
        };
        let treatment = record[treat_col].trim().to_string();
        let covariates: Vec<f64> = cov_cols
            .iter()
            .zip(&cov_names)
            .map(|(&c, name)| parse_number(&record[c], name, line))
            .collect::<Result<_>>()?;

        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending {
                line,
                treatment: treatment.clone(),
                covariates: covariates.clone(),
                events: Vec::new(),
                censor: None,
            }
        });
        if entry.treatment != treatment {
            return Err(ReclError::Parse {
                line,
                message: format!("subject {id}: treatment changes within subject"),
            });
        }
        if entry.covariates != covariates {
            return Err(ReclError::Parse {
                line,
                message: format!("subject {id}: covariates not constant within subject"),
            });
        }
        if status == 1 {
            entry.events.push(time);
        } else if entry.censor.replace(time).is_some() {
            return Err(ReclError::Parse {
                line,
                message: format!("subject {id}: more than one censoring row"),
            });
        }
    }

    let mut labels: Vec<String> = pending.values().map(|p| p.treatment.clone()).collect();
    labels.sort();
    labels.dedup();
    sort_arm_labels(&mut labels);
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let p = &pending[id];
        let censor = p.censor.ok_or_else(|| ReclError::Parse {
            line: p.line,
            message: format!("subject {id}: missing censoring row"),
        })?;
        let mut events = p.events.clone();
        events.sort_by(f64::total_cmp);
        if events.windows(2).any(|w| w[0] == w[1]) {
            return Err(ReclError::Parse {
                line: p.line,
                message: format!("subject {id}: duplicated event time"),
            });
        }
        let subject = Subject::new(
            id.clone(),
            p.covariates.clone(),
            index[p.treatment.as_str()],
            events,
            censor,
        )
        .map_err(|e| ReclError::Parse {
            line: p.line,
            message: e.to_string(),
        })?;
        subjects.push(subject);
    }
    let k = labels.len().max(1);
    Cohort::new(subjects, cov_names.len(), k, None)?
        .with_covariate_names(cov_names)?
        .with_arm_labels(if labels.is_empty() { vec!["0".into()] } else { labels })
}

/// Reads a covariate-only CSV (`id` column plus the named covariates) as used
/// by regime assignment.
pub fn parse_covariates(text: &str, names: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReclError::invalid(format!("missing column {name:?}")))
    };
    let id_col = find("id")?;
    let cols: Vec<usize> = names.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut last_id: Option<String> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let id = record[id_col].to_string();
        // long-format files repeat ids on consecutive rows
        if last_id.as_deref() == Some(id.as_str()) {
            continue;
        }
        let x = cols
            .iter()
            .zip(names)
            .map(|(&c, n)| parse_number(&record[c], n, row + 2))
            .collect::<Result<Vec<_>>>()?;
        last_id = Some(id.clone());
        rows.push((id, x));
    }
    Ok(rows)
}
