//! Data-space expansion of a cost-sensitive multi-arm problem.
//!
//! Each subject `i` becomes `K` ordinary weighted examples `(Xᵢ, k, wᵢᵏ)` with
//! benefit weights `wᵢᵏ = maxₛ Ĉˢᵢ − Ĉᵏᵢ`. For any rule `g`,
//!
//! ```text
//! Σₖ wᵢᵏ · I(g(Xᵢ) ≠ k) = Σₖ wᵢᵏ − wᵢ^{g(Xᵢ)} = const_i + Ĉ^{g(Xᵢ)}ᵢ
//! ```
//!
//! so minimising weighted misclassification over the expanded data minimises
//! the total cost `Σᵢ Ĉ^{g(Xᵢ)}ᵢ`. With two arms the example carrying label
//! `W` has weight `|C|` and the other has weight zero, which is binary
//! C-learning.

use serde::{Deserialize, Serialize};

use crate::contrast::CostMatrix;
use crate::error::{ReclError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedExample {
    pub covariates: Vec<f64>,
    pub label: usize,
    pub weight: f64,
}

/// Benefit weights `max(row) − row[k]` for one cost row.
pub fn benefit_weights(costs: &[f64]) -> Vec<f64> {
    let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    costs.iter().map(|c| max - c).collect()
}

/// Expands `cm` over covariate rows `x` (aligned with the cost rows), giving
/// `n·K` examples ordered subject-major.
pub fn expand(cm: &CostMatrix, x: &[Vec<f64>]) -> Result<Vec<ExpandedExample>> {
    if cm.n() != x.len() {
        return Err(ReclError::invalid(format!(
            "{} cost rows but {} covariate rows",
            cm.n(),
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(cm.n() * cm.k());
    for (row, xi) in cm.costs.iter().zip(x) {
        for (label, weight) in benefit_weights(row).into_iter().enumerate() {
            out.push(ExpandedExample {
                covariates: xi.clone(),
                label,
                weight,
            });
        }
    }
    Ok(out)
}

/// `Σ w · I(pred ≠ label)` for predictions indexed like the examples.
pub fn weighted_misclassification(examples: &[ExpandedExample], predict: impl Fn(&[f64]) -> usize) -> f64 {
    examples
        .iter()
        .filter(|e| predict(&e.covariates) != e.label)
        .map(|e| e.weight)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::Method;

    #[test]
    fn two_arm_reduction() {
        assert_eq!(benefit_weights(&[0.6, 0.0]), vec![0.0, 0.6]);
    }

    #[test]
    fn max_shift_arithmetic() {
        assert_eq!(benefit_weights(&[2.0, 0.0, 5.0]), vec![3.0, 5.0, 0.0]);
    }

    #[test]
    fn expansion_is_subject_major() {
        let cm = CostMatrix::from_signals(
            1.0,
            Method::Ipw,
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.0, 3.0], vec![0.0, 2.0, 2.0]],
        )
        .unwrap();
        let ex = expand(&cm, &[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(ex.len(), 6);
        assert_eq!(ex[4].covariates, vec![2.0]);
        assert_eq!(ex[4].label, 1);
        assert_eq!(ex[3].weight, 2.0);
        assert!(expand(&cm, &[vec![1.0]]).is_err());
    }

    #[test]
    fn objective_identity_for_every_assignment() {
        let rows = [[0.0, 1.3, 0.4], [2.2, 0.0, 0.7], [0.0, 0.0, 5.0]];
        for row in rows {
            let w = benefit_weights(&row);
            let total: f64 = w.iter().sum();
            for g in 0..3 {
                let lhs: f64 = (0..3).filter(|&k| k != g).map(|k| w[k]).sum();
                let c_max = row.iter().copied().fold(f64::MIN, f64::max);
                // Σₖ w I(g≠k) = Σ w − w_g = (Σ w − c_max) + C_g
                assert!((lhs - (total - w[g])).abs() < 1e-12);
                assert!((lhs - (total - c_max + row[g])).abs() < 1e-12);
            }
        }
    }
}
