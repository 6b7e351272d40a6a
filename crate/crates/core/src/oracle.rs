//! Exhaustive regime search over small threshold-tree spaces.
//!
//! Used to check the tree learner and the expansion identity: every tree of
//! depth at most `d` built from a fixed list of candidate splits, with every
//! assignment of arms to leaves, is enumerated and scored directly on the
//! cost matrix.

use crate::contrast::CostMatrix;
use crate::error::{ReclError, Result};
use crate::expansion::expand;
use crate::tree::{annotate, Node, Regime, Split, TreeRegime};

pub const MAX_SUBJECTS: usize = 12;
pub const MAX_ARMS: usize = 3;
pub const MAX_SPLITS: usize = 6;
pub const MAX_DEPTH: usize = 2;

/// Threshold tree used during enumeration.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdRule {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<ThresholdRule>,
        right: Box<ThresholdRule>,
    },
}

impl Regime for ThresholdRule {
    fn assign(&self, x: &[f64]) -> usize {
        match self {
            ThresholdRule::Leaf(a) => *a,
            ThresholdRule::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.assign(x)
                } else {
                    right.assign(x)
                }
            }
        }
    }
}

impl ThresholdRule {
    pub fn to_node(&self, k: usize) -> Node {
        match self {
            ThresholdRule::Leaf(a) => Node::leaf(*a, k),
            ThresholdRule::Split {
                feature,
                threshold,
                left,
                right,
            } => Node {
                split: Some(Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(left.to_node(k)),
                    right: Box::new(right.to_node(k)),
                }),
                ..Node::leaf(0, k)
            },
        }
    }
}

/// All threshold trees of depth `<= depth` over `splits` with leaves in
/// `0..k`, in a fixed order (leaves first, then by root split).
pub fn enumerate_regimes(k: usize, splits: &[(usize, f64)], depth: usize) -> Vec<ThresholdRule> {
    let mut rules: Vec<ThresholdRule> = (0..k).map(ThresholdRule::Leaf).collect();
    if depth == 0 {
        return rules;
    }
    let sub = enumerate_regimes(k, splits, depth - 1);
    for &(feature, threshold) in splits {
        for left in &sub {
            for right in &sub {
                rules.push(ThresholdRule::Split {
                    feature,
                    threshold,
                    left: Box::new(left.clone()),
                    right: Box::new(right.clone()),
                });
            }
        }
    }
    rules
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub rule: ThresholdRule,
    pub regime: TreeRegime,
    /// `Σᵢ Ĉ^{g(Xᵢ)}ᵢ` at the minimiser
    pub objective: f64,
    pub searched: usize,
}

/// Exhaustive minimiser of the total cost over all depth-`<= depth` trees on
/// the candidate splits. The first minimiser in enumeration order wins.
pub fn brute_force_regime(
    cm: &CostMatrix,
    x: &[Vec<f64>],
    splits: &[(usize, f64)],
    depth: usize,
) -> Result<BruteForceResult> {
    if cm.n() > MAX_SUBJECTS || cm.k() > MAX_ARMS || splits.len() > MAX_SPLITS || depth > MAX_DEPTH {
        return Err(ReclError::InstanceTooLarge(format!(
            "n={} (max {MAX_SUBJECTS}), K={} (max {MAX_ARMS}), splits={} (max {MAX_SPLITS}), depth={depth} (max {MAX_DEPTH})",
            cm.n(),
            cm.k(),
            splits.len()
        )));
    }
    if x.len() != cm.n() {
        return Err(ReclError::invalid("covariate rows do not match cost rows"));
    }
    let p = x.first().map_or(0, Vec::len);
    if let Some(&(f, _)) = splits.iter().find(|(f, _)| *f >= p) {
        return Err(ReclError::invalid(format!("candidate split on feature {f} beyond dimension {p}")));
    }
    let k = cm.k();
    let rules = enumerate_regimes(k, splits, depth);
    let searched = rules.len();
    let mut best: Option<(f64, ThresholdRule)> = None;
    for rule in rules {
        let assigned: Vec<usize> = x.iter().map(|xi| rule.assign(xi)).collect();
        let obj = cm.objective(&assigned);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, rule));
        }
    }
    let (objective, rule) = best.expect("at least one leaf rule");
    let mut root = rule.to_node(k);
    annotate(&mut root, &expand(cm, x)?, k);
    let regime = TreeRegime::new(root, p, k);
    Ok(BruteForceResult {
        rule,
        regime,
        objective,
        searched,
    })
}
