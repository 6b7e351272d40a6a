//! Weighted CART tree regimes.
//!
//! Trees are grown greedily on expanded weighted examples: at every node the
//! split `(feature, threshold)` with the largest weighted Gini impurity
//! reduction is taken, thresholds being midpoints between consecutive
//! distinct feature values. Ties in gain go to the smaller feature index,
//! then the smaller threshold. The left child holds `x[feature] <= threshold`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::contrast::Method;
use crate::error::{ReclError, Result};
use crate::expansion::ExpandedExample;

pub const FORMAT_TAG: &str = "recl-tree/1";

/// Anything that recommends an arm from a covariate vector.
pub trait Regime {
    fn assign(&self, x: &[f64]) -> usize;
}

impl<F: Fn(&[f64]) -> usize> Regime for F {
    fn assign(&self, x: &[f64]) -> usize {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf_weight: f64,
    pub min_split_gain: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 3,
            min_leaf_weight: 0.0,
            min_split_gain: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: Box<Node>,
    pub right: Box<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// weighted-majority arm
    pub action: usize,
    /// share of the node's training weight carried by each arm label
    pub distribution: Vec<f64>,
    /// fraction of training subjects reaching the node
    pub population: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Node {
    pub fn leaf(action: usize, k: usize) -> Self {
        let mut distribution = vec![0.0; k];
        if action < k {
            distribution[action] = 1.0;
        }
        Node {
            action,
            distribution,
            population: 1.0,
            split: None,
        }
    }

    fn depth(&self) -> usize {
        match &self.split {
            None => 0,
            Some(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    fn assign(&self, x: &[f64]) -> usize {
        let mut node = self;
        while let Some(s) = &node.split {
            node = if x[s.feature] <= s.threshold { &s.left } else { &s.right };
        }
        node.action
    }

    fn validate(&self, p: usize, k: usize) -> Result<()> {
        if self.action >= k {
            return Err(ReclError::invalid(format!("node action {} outside 0..{k}", self.action)));
        }
        if let Some(s) = &self.split {
            if s.feature >= p || !s.threshold.is_finite() {
                return Err(ReclError::invalid(format!(
                    "invalid split on feature {} at {}",
                    s.feature, s.threshold
                )));
            }
            s.left.validate(p, k)?;
            s.right.validate(p, k)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeMeta {
    pub method: Option<Method>,
    pub horizon: Option<f64>,
    pub covariate_names: Vec<String>,
    pub arm_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRegime {
    pub format: String,
    pub p: usize,
    pub k: usize,
    pub depth: usize,
    pub root: Node,
    pub meta: TreeMeta,
}

impl Regime for TreeRegime {
    fn assign(&self, x: &[f64]) -> usize {
        self.root.assign(x)
    }
}

impl TreeRegime {
    pub fn new(root: Node, p: usize, k: usize) -> Self {
        TreeRegime {
            format: FORMAT_TAG.into(),
            p,
            k,
            depth: root.depth(),
            root,
            meta: TreeMeta {
                method: None,
                horizon: None,
                covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
                arm_labels: (0..k).map(|a| a.to_string()).collect(),
            },
        }
    }

    /// Constant regime.
    pub fn root_only(action: usize, p: usize, k: usize) -> Self {
        TreeRegime::new(Node::leaf(action, k), p, k)
    }

    pub fn assign_all(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        rows.iter().map(|x| self.assign(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: TreeRegime = serde_json::from_str(text)?;
        if tree.format != FORMAT_TAG {
            return Err(ReclError::invalid(format!(
                "unsupported regime format {:?}",
                tree.format
            )));
        }
        tree.root.validate(tree.p, tree.k)?;
        Ok(tree)
    }

    /// Human-readable rendering; see [`render_tree`].
    pub fn render(&self) -> String {
        render_tree(self, &self.meta.covariate_names, &self.meta.arm_labels)
            .expect("metadata labels match tree dimensions")
    }
}

/// Renders one box per node: recommended arm, weight share of the second arm
/// (or every arm for `K > 2`), and the node's population share.
pub fn render_tree(tree: &TreeRegime, covariates: &[String], actions: &[String]) -> Result<String> {
    if covariates.len() != tree.p {
        return Err(ReclError::invalid(format!(
            "{} covariate labels for a tree over {} covariates",
            covariates.len(),
            tree.p
        )));
    }
    if actions.len() != tree.k {
        return Err(ReclError::invalid(format!(
            "{} action labels for a tree over {} arms",
            actions.len(),
            tree.k
        )));
    }
    let mut out = String::new();
    let _ = write!(out, "{FORMAT_TAG}");
    if let Some(m) = tree.meta.method {
        let _ = write!(out, " method={m}");
    }
    if let Some(t) = tree.meta.horizon {
        let _ = write!(out, " t={t}");
    }
    out.push('\n');
    render_node(&tree.root, covariates, actions, 0, &mut out);
    Ok(out)
}

fn render_node(node: &Node, covariates: &[String], actions: &[String], indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    let shares = if actions.len() == 2 {
        format!("p({})={:.3}", actions[1], node.distribution.get(1).copied().unwrap_or(0.0))
    } else {
        let parts: Vec<String> = actions
            .iter()
            .zip(&node.distribution)
            .map(|(a, v)| format!("p({a})={v:.3}"))
            .collect();
        parts.join(" ")
    };
    let _ = writeln!(
        out,
        "{pad}[{} | {shares} | {:.1}%]",
        actions[node.action],
        100.0 * node.population
    );
    if let Some(s) = &node.split {
        let name = &covariates[s.feature];
        let _ = writeln!(out, "{pad}  {name} <= {}:", s.threshold);
        render_node(&s.left, covariates, actions, indent + 2, out);
        let _ = writeln!(out, "{pad}  {name} > {}:", s.threshold);
        render_node(&s.right, covariates, actions, indent + 2, out);
    }
}

/// Recomputes the distribution and population of every node of a fixed
/// tree from `examples`. Leaf actions are kept; internal nodes take the
/// weighted majority, as in a grown tree.
pub fn annotate(root: &mut Node, examples: &[ExpandedExample], k: usize) {
    fn walk(node: &mut Node, examples: &[ExpandedExample], idx: &[usize], k: usize, total: usize) {
        let w = class_weights(examples, idx, k);
        let sum: f64 = w.iter().sum();
        node.distribution = if sum > 0.0 {
            w.iter().map(|v| v / sum).collect()
        } else {
            vec![0.0; k]
        };
        node.population = idx.len() as f64 / total.max(1) as f64;
        if let Some(s) = &mut node.split {
            node.action = majority(&w);
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| examples[i].covariates[s.feature] <= s.threshold);
            walk(&mut s.left, examples, &l, k, total);
            walk(&mut s.right, examples, &r, k, total);
        }
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    walk(root, examples, &idx, k, examples.len());
}

struct Grower<'a> {
    examples: &'a [ExpandedExample],
    k: usize,
    p: usize,
    total: usize,
    config: TreeConfig,
}

fn class_weights(examples: &[ExpandedExample], idx: &[usize], k: usize) -> Vec<f64> {
    let mut w = vec![0.0; k];
    for &i in idx {
        w[examples[i].label] += examples[i].weight;
    }
    w
}

/// `W · gini = W − Σ w_k² / W`.
fn weighted_impurity(w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    total - w.iter().map(|v| v * v).sum::<f64>() / total
}

fn majority(w: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in w.iter().enumerate().skip(1) {
        if v > w[best] {
            best = a;
        }
    }
    best
}

impl Grower<'_> {
    fn node_stats(&self, idx: &[usize]) -> (Node, Vec<f64>) {
        let w = class_weights(self.examples, idx, self.k);
        let total: f64 = w.iter().sum();
        let distribution = if total > 0.0 {
            w.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; self.k]
        };
        let node = Node {
            action: majority(&w),
            distribution,
            population: idx.len() as f64 / self.total as f64,
            split: None,
        };
        (node, w)
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> Node {
        let (mut node, w) = self.node_stats(&idx);
        let total: f64 = w.iter().sum();
        if depth >= self.config.max_depth || total <= 0.0 {
            return node;
        }
        let parent = weighted_impurity(&w);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.p {
            let mut order = idx.clone();
            order.sort_by(|&a, &b| {
                self.examples[a].covariates[f].total_cmp(&self.examples[b].covariates[f])
            });
            let mut left = vec![0.0; self.k];
            for pos in 0..order.len().saturating_sub(1) {
                let e = &self.examples[order[pos]];
                left[e.label] += e.weight;
                let v = e.covariates[f];
                let next = self.examples[order[pos + 1]].covariates[f];
                if v == next {
                    continue;
                }
                let right: Vec<f64> = w.iter().zip(&left).map(|(a, b)| a - b).collect();
                let wl: f64 = left.iter().sum();
                let wr: f64 = right.iter().sum();
                if wl <= 0.0 || wr <= 0.0 || wl < self.config.min_leaf_weight || wr < self.config.min_leaf_weight {
                    continue;
                }
                let gain = parent - weighted_impurity(&left) - weighted_impurity(&right);
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return node;
        };
        if gain <= self.config.min_split_gain {
            return node;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.examples[i].covariates[feature] <= threshold);
        node.split = Some(Split {
            feature,
            threshold,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        });
        node
    }
}

/// Grows a weighted CART classifier. Arm count is one more than the largest
/// label; inputs with no positive weight give a root-only tree on arm 0.
pub fn fit_weighted_tree(examples: &[ExpandedExample], config: &TreeConfig) -> Result<TreeRegime> {
    let k = examples.iter().map(|e| e.label + 1).max().unwrap_or(1).max(2);
    fit_weighted_tree_k(examples, k, config)
}

/// As [`fit_weighted_tree`] with an explicit arm count.
pub fn fit_weighted_tree_k(examples: &[ExpandedExample], k: usize, config: &TreeConfig) -> Result<TreeRegime> {
    let p = examples.first().map_or(0, |e| e.covariates.len());
    for e in examples {
        if e.covariates.len() != p {
            return Err(ReclError::invalid("examples differ in covariate dimension"));
        }
        if e.label >= k {
            return Err(ReclError::invalid(format!("label {} outside 0..{k}", e.label)));
        }
        if e.weight < 0.0 || !e.weight.is_finite() {
            return Err(ReclError::invalid(format!("weight {} must be finite and nonnegative", e.weight)));
        }
        if e.covariates.iter().any(|v| !v.is_finite()) {
            return Err(ReclError::invalid("non-finite covariate in training examples"));
        }
    }
    if examples.is_empty() {
        return Ok(TreeRegime::root_only(0, p, k));
    }
    let grower = Grower {
        examples,
        k,
        p,
        total: examples.len(),
        config: *config,
    };
    let root = grower.grow((0..examples.len()).collect(), 0);
    Ok(TreeRegime::new(root, p, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: f64, label: usize, weight: f64) -> ExpandedExample {
        ExpandedExample {
            covariates: vec![x],
            label,
            weight,
        }
    }

    #[test]
    fn separable_data_needs_one_split() {
        let examples: Vec<_> = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&x| ex(x, usize::from(x > 0.0), 1.0))
            .collect();
        let tree = fit_weighted_tree(&examples, &TreeConfig::default()).unwrap();
        assert_eq!(tree.depth, 1);
        let split = tree.root.split.as_ref().unwrap();
        assert_eq!(split.feature, 0);
        assert_eq!(split.threshold, 0.25);
        let miss = crate::expansion::weighted_misclassification(&examples, |x| tree.assign(x));
        assert_eq!(miss, 0.0);
    }

    #[test]
    fn zero_weights_give_root_on_arm_zero() {
        let examples = vec![ex(0.0, 1, 0.0), ex(1.0, 1, 0.0), ex(2.0, 0, 0.0)];
        let tree = fit_weighted_tree(&examples, &TreeConfig::default()).unwrap();
        assert!(tree.root.split.is_none());
        assert_eq!(tree.assign(&[5.0]), 0);
    }

    #[test]
    fn boundary_goes_left() {
        let root = Node {
            split: Some(Split {
                feature: 0,
                threshold: 1.5,
                left: Box::new(Node::leaf(0, 2)),
                right: Box::new(Node::leaf(1, 2)),
            }),
            ..Node::leaf(0, 2)
        };
        let tree = TreeRegime::new(root, 1, 2);
        assert_eq!(tree.assign(&[1.5]), 0);
        assert_eq!(tree.assign(&[1.5000001]), 1);
        let constant = TreeRegime::root_only(1, 3, 2);
        assert_eq!(constant.assign(&[9.0, -9.0, 0.0]), 1);
    }

    #[test]
    fn stage_tree_recommends_chemotherapy_for_stage_three() {
        // stage in {1, 2} -> 0, stage 3 -> 1 ; covariates (sex, stage)
        let root = Node {
            split: Some(Split {
                feature: 1,
                threshold: 2.5,
                left: Box::new(Node::leaf(0, 2)),
                right: Box::new(Node::leaf(1, 2)),
            }),
            ..Node::leaf(0, 2)
        };
        let tree = TreeRegime::new(root, 2, 2);
        for sex in [0.0, 1.0] {
            assert_eq!(tree.assign(&[sex, 1.0]), 0);
            assert_eq!(tree.assign(&[sex, 2.0]), 0);
            assert_eq!(tree.assign(&[sex, 3.0]), 1);
        }
    }

    #[test]
    fn weighted_majority_ties_go_to_smaller_arm() {
        let examples = vec![ex(0.0, 1, 1.0), ex(0.0, 0, 1.0)];
        let tree = fit_weighted_tree(&examples, &TreeConfig::default()).unwrap();
        assert_eq!(tree.root.action, 0);
    }

    #[test]
    fn render_root_only() {
        let tree = TreeRegime::root_only(0, 1, 2);
        let text = render_tree(&tree, &["age".into()], &["none".into(), "chemo".into()]).unwrap();
        assert!(text.contains("[none | p(chemo)=0.000 | 100.0%]"), "{text}");
        assert!(render_tree(&tree, &[], &["a".into(), "b".into()]).is_err());
        assert!(render_tree(&tree, &["age".into()], &["a".into()]).is_err());
    }

    #[test]
    fn child_populations_sum_to_parent() {
        let examples: Vec<_> = (0..10).map(|i| ex(i as f64, usize::from(i >= 3), 1.0)).collect();
        let tree = fit_weighted_tree(&examples, &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
        let s = tree.root.split.as_ref().unwrap();
        assert!((s.left.population + s.right.population - tree.root.population).abs() < 1e-12);
        assert!((s.left.population - 0.3).abs() < 1e-12);
        let text = tree.render();
        assert_eq!(text.matches('[').count(), 3);
    }

    #[test]
    fn json_round_trip_is_a_fixpoint() {
        let examples: Vec<_> = (0..12)
            .map(|i| ExpandedExample {
                covariates: vec![(i as f64 * 0.37).sin(), i as f64 / 7.0],
                label: i % 3,
                weight: 1.0 + (i as f64).cos().abs(),
            })
            .collect();
        let tree = fit_weighted_tree(&examples, &TreeConfig::default()).unwrap();
        let text = tree.to_json().unwrap();
        let back = TreeRegime::from_json(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_foreign_format() {
        let mut tree = TreeRegime::root_only(0, 1, 2);
        tree.format = "other/9".into();
        let text = serde_json::to_string(&tree).unwrap();
        assert!(TreeRegime::from_json(&text).is_err());
    }
}
