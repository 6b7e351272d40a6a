//! End-to-end regime estimation: pseudo-observations, outcome model and
//! propensity model as the method requires, then costs, expansion and a
//! weighted tree.

use crate::cohort::Cohort;
use crate::contrast::{binary_contrast, cost_matrix, CostInputs, CostMatrix, Method};
use crate::crf::pseudo_observations;
use crate::error::{ReclError, Result};
use crate::expansion::{expand, ExpandedExample};
use crate::propensity::{fit_propensity, PsFormula, PsModel};
use crate::smr::{fit_smr, SmrConfig, SmrFit};
use crate::tree::{fit_weighted_tree_k, TreeConfig, TreeRegime};

#[derive(Debug, Clone, PartialEq)]
pub enum PsSource {
    /// fit a logit model on these regressors
    Formula(PsFormula),
    /// externally estimated probabilities
    External(PsModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub horizon: f64,
    pub ps: Option<PsSource>,
    pub tree: TreeConfig,
    pub smr: SmrConfig,
}

impl RunConfig {
    pub fn new(method: Method, horizon: f64) -> Self {
        RunConfig {
            method,
            horizon,
            ps: None,
            tree: TreeConfig::default(),
            smr: SmrConfig::default(),
        }
    }

    pub fn with_ps(mut self, ps: PsSource) -> Self {
        self.ps = Some(ps);
        self
    }

    pub fn validate(&self, cohort: &Cohort) -> Result<()> {
        if self.horizon <= 0.0 || !self.horizon.is_finite() {
            return Err(ReclError::invalid(format!("horizon {} must be positive", self.horizon)));
        }
        if cohort.k() < 2 {
            return Err(ReclError::invalid("a regime needs at least two arms"));
        }
        if self.method.needs_propensity() && self.ps.is_none() {
            return Err(ReclError::MissingInput("propensity"));
        }
        if let Some(PsSource::External(m)) = &self.ps {
            if m.k != cohort.k() {
                return Err(ReclError::invalid(format!(
                    "propensity table has {} arms, cohort has {}",
                    m.k,
                    cohort.k()
                )));
            }
        }
        Ok(())
    }
}

/// Fitted nuisance models shared by several methods.
#[derive(Debug, Clone, Default)]
pub struct Nuisance {
    pub pseudo_obs: Option<Vec<f64>>,
    pub smr: Option<SmrFit>,
    pub ps: Option<PsModel>,
}

impl Nuisance {
    pub fn inputs(&self) -> CostInputs<'_> {
        CostInputs {
            fit: self.smr.as_ref(),
            ps: self.ps.as_ref(),
            pseudo_obs: self.pseudo_obs.as_deref(),
        }
    }
}

/// Fits whatever `config.method` needs, with errors labelled by stage.
pub fn fit_nuisance(cohort: &Cohort, config: &RunConfig) -> Result<Nuisance> {
    config.validate(cohort)?;
    let mut out = Nuisance::default();
    if config.method.needs_propensity() {
        out.pseudo_obs =
            Some(pseudo_observations(cohort, config.horizon).map_err(|e| e.in_stage("pseudo-observations"))?);
        out.ps = Some(match config.ps.as_ref().expect("validated") {
            PsSource::Formula(f) => fit_propensity(cohort, f).map_err(|e| e.in_stage("propensity"))?,
            PsSource::External(m) => m.clone(),
        });
    }
    if config.method.needs_outcome_model() {
        out.smr = Some(fit_smr(cohort, &config.smr).map_err(|e| e.in_stage("outcome model"))?);
    }
    Ok(out)
}

/// Everything produced on the way to a regime, for auditing.
#[derive(Debug, Clone)]
pub struct ItrFit {
    pub tree: TreeRegime,
    pub costs: CostMatrix,
    pub nuisance: Nuisance,
}

impl ItrFit {
    pub fn tree_text(&self) -> String {
        self.tree.render()
    }
}

/// Expands a cost matrix and grows the tree regime.
pub fn regime_from_costs(cm: &CostMatrix, x: &[Vec<f64>], config: &TreeConfig) -> Result<TreeRegime> {
    let examples = expand(cm, x)?;
    let mut tree = fit_weighted_tree_k(&examples, cm.k(), config)?;
    tree.meta.method = Some(cm.method);
    tree.meta.horizon = Some(cm.horizon);
    Ok(tree)
}

fn label_tree(tree: &mut TreeRegime, cohort: &Cohort) {
    tree.meta.covariate_names = cohort.covariate_names().to_vec();
    tree.meta.arm_labels = cohort.arm_labels().to_vec();
}

/// Multi-arm pipeline: costs for every arm, data-space expansion, weighted
/// CART. Works for any `K >= 2`.
pub fn fit_itr(cohort: &Cohort, config: &RunConfig) -> Result<ItrFit> {
    let nuisance = fit_nuisance(cohort, config)?;
    fit_itr_with(cohort, config, nuisance)
}

/// As [`fit_itr`] with nuisance models already fitted.
pub fn fit_itr_with(cohort: &Cohort, config: &RunConfig, nuisance: Nuisance) -> Result<ItrFit> {
    let costs = cost_matrix(cohort, config.method, config.horizon, &nuisance.inputs())
        .map_err(|e| e.in_stage("costs"))?;
    let mut tree = regime_from_costs(&costs, &cohort.covariate_rows(), &config.tree)
        .map_err(|e| e.in_stage("classifier"))?;
    label_tree(&mut tree, cohort);
    Ok(ItrFit { tree, costs, nuisance })
}

/// Two-arm pipeline: one example per subject with label `W = I(C < 0)` and
/// weight `|C|`.
pub fn fit_itr_binary(cohort: &Cohort, config: &RunConfig) -> Result<ItrFit> {
    let nuisance = fit_nuisance(cohort, config)?;
    let inputs = nuisance.inputs();
    let contrast =
        binary_contrast(cohort, config.method, config.horizon, &inputs).map_err(|e| e.in_stage("costs"))?;
    let examples: Vec<ExpandedExample> = cohort
        .subjects()
        .iter()
        .zip(contrast.weights())
        .zip(&contrast.label)
        .map(|((s, w), &label)| ExpandedExample {
            covariates: s.covariates.clone(),
            label,
            weight: w,
        })
        .collect();
    let mut tree = fit_weighted_tree_k(&examples, 2, &config.tree).map_err(|e| e.in_stage("classifier"))?;
    tree.meta.method = Some(config.method);
    tree.meta.horizon = Some(config.horizon);
    label_tree(&mut tree, cohort);
    let costs = cost_matrix(cohort, config.method, config.horizon, &inputs).map_err(|e| e.in_stage("costs"))?;
    Ok(ItrFit { tree, costs, nuisance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Subject;

    fn cohort() -> Cohort {
        let subjects = (0..8)
            .map(|i| {
                let x = i as f64 / 4.0 - 1.0;
                let events = if i % 2 == 0 { vec![0.5, 1.5] } else { vec![1.0] };
                Subject::new(format!("s{i}"), vec![x], i % 2, events, 3.0).unwrap()
            })
            .collect();
        Cohort::new(subjects, 1, 2, None).unwrap()
    }

    #[test]
    fn ipw_without_propensity_is_rejected() {
        let err = fit_itr(&cohort(), &RunConfig::new(Method::Ipw, 2.0)).unwrap_err();
        assert_eq!(err.to_string(), "propensity required");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_horizon_is_rejected() {
        let cfg = RunConfig::new(Method::OutcomeRegression, -1.0);
        assert!(fit_itr(&cohort(), &cfg).is_err());
    }

    #[test]
    fn stage_names_reach_the_error() {
        let subjects = (0..4)
            .map(|i| Subject::new(format!("s{i}"), vec![i as f64], i % 2, vec![], 3.0).unwrap())
            .collect();
        let cohort = Cohort::new(subjects, 1, 2, None).unwrap();
        let err = fit_itr(&cohort, &RunConfig::new(Method::OutcomeRegression, 2.0)).unwrap_err();
        assert!(err.to_string().starts_with("outcome model:"), "{err}");
    }

    #[test]
    fn labels_come_from_the_cohort() {
        let cfg = RunConfig::new(Method::Ipw, 2.0).with_ps(PsSource::Formula(PsFormula::all(1)));
        let fit = fit_itr(&cohort(), &cfg).unwrap();
        assert_eq!(fit.tree.meta.covariate_names, vec!["x1".to_string()]);
        assert_eq!(fit.tree.meta.method, Some(Method::Ipw));
        assert_eq!(fit.costs.n(), 8);
    }
}
