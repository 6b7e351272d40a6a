//! Scoring regimes on observed data.
//!
//! Without a known generating model, the value of a regime `ĝ` at `t` is the
//! inverse-propensity weighted mean of pseudo-observations over the subjects
//! whose received arm agrees with the recommendation:
//!
//! ```text
//! Σᵢ Λ̂ᵢ(t) I(Aᵢ = ĝᵢ) / π̂(Aᵢ, Xᵢ)  /  Σᵢ I(Aᵢ = ĝᵢ) / π̂(Aᵢ, Xᵢ)
//! ```
//!
//! The propensity is that of the received arm.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::cohort::Cohort;
use crate::crf::{group_crf, pseudo_observations};
use crate::error::{ReclError, Result};
use crate::propensity::PsModel;

/// Empirical value of recommended arms `assigned` (one per subject) given
/// precomputed pseudo-observations at the horizon.
pub fn empirical_value_with(
    cohort: &Cohort,
    assigned: &[usize],
    ps: &PsModel,
    pseudo_obs: &[f64],
    regime_name: &str,
) -> Result<f64> {
    if assigned.len() != cohort.len() || pseudo_obs.len() != cohort.len() {
        return Err(ReclError::invalid("one recommendation and pseudo-observation per subject required"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((s, &g), &po) in cohort.subjects().iter().zip(assigned).zip(pseudo_obs) {
        if s.treatment != g {
            continue;
        }
        let w = 1.0 / ps.subject_probabilities(s)?[s.treatment];
        num += w * po;
        den += w;
    }
    if den <= 0.0 {
        return Err(ReclError::EmptyGroup(format!(
            "regime {regime_name} agrees with no subject's received treatment"
        )));
    }
    Ok(num / den)
}

/// Empirical value of a regime's recommendations at horizon `t`.
pub fn empirical_value(cohort: &Cohort, assigned: &[usize], ps: &PsModel, t: f64, regime_name: &str) -> Result<f64> {
    let po = pseudo_observations(cohort, t)?;
    empirical_value_with(cohort, assigned, ps, &po, regime_name)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConcordanceSplit {
    pub concordant: HashSet<String>,
    pub discordant: HashSet<String>,
}

/// Partitions subjects by whether their received arm equals the
/// recommendation.
pub fn concordance_split(cohort: &Cohort, assigned: &[usize]) -> Result<ConcordanceSplit> {
    if assigned.len() != cohort.len() {
        return Err(ReclError::invalid("one recommendation per subject required"));
    }
    let mut split = ConcordanceSplit::default();
    for (s, &g) in cohort.subjects().iter().zip(assigned) {
        if s.treatment == g {
            split.concordant.insert(s.id.clone());
        } else {
            split.discordant.insert(s.id.clone());
        }
    }
    Ok(split)
}

/// Unadjusted Nelson-Aalen curves of the two groups sampled on `grid`, as
/// `time,value` CSVs `(concordant, discordant)`. An empty group yields a
/// header-only file.
pub fn export_group_crfs(cohort: &Cohort, split: &ConcordanceSplit, grid: &[f64]) -> Result<(String, String)> {
    let render = |members: &HashSet<String>| -> Result<String> {
        if members.is_empty() {
            return Ok("time,value\n".into());
        }
        Ok(group_crf(cohort, members)?.grid_csv(grid))
    };
    Ok((render(&split.concordant)?, render(&split.discordant)?))
}

/// Evenly spaced grid of `points` times on `[0, end]`.
pub fn uniform_grid(end: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![end];
    }
    (0..points).map(|i| end * i as f64 / (points - 1) as f64).collect()
}

/// Default evaluation horizons: the one-third quantile of the observed
/// follow-up times and the largest one.
pub fn default_horizons(cohort: &Cohort) -> Vec<f64> {
    let mut times: Vec<f64> = cohort.subjects().iter().map(|s| s.censor_time()).collect();
    if times.is_empty() {
        return Vec::new();
    }
    times.sort_by(f64::total_cmp);
    let pos = (times.len() - 1) as f64 / 3.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let q = times[lo] + (pos - lo as f64) * (times[hi] - times[lo]);
    vec![q, *times.last().unwrap()]
}

/// Table of empirical values, one row per horizon and one column per regime.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueReport {
    pub horizons: Vec<f64>,
    pub methods: Vec<String>,
    /// `values[h][m]`
    pub values: Vec<Vec<f64>>,
}

impl ValueReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for m in &self.methods {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
        for (t, row) in self.horizons.iter().zip(&self.values) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
