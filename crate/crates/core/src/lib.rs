//! Tree-structured individualized treatment regimes for recurrent events.
//!
//! Given subjects with covariates, a received treatment and a right-censored
//! stream of recurrent event times, this crate estimates the rule that
//! minimises the expected number of events by a horizon `t` (recurrent
//! C-learning):
//!
//! 1. [`crf`]: Nelson-Aalen cumulative rates and jackknife pseudo-observations.
//! 2. [`smr`]: multiplicative rates outcome model `exp(θᵀZ) dμ(t)`.
//! 3. [`propensity`]: logistic / multinomial propensity scores, or an external table.
//! 4. [`contrast`]: outcome-regression, inverse-weighted or doubly robust
//!    per-arm costs.
//! 5. [`expansion`] and [`tree`]: the cost-sensitive problem as ordinary
//!    weighted classification, solved by a weighted CART tree.
//!
//! [`sim`] reproduces the two simulation scenarios, [`evaluation`] scores
//! regimes on observed data, and [`oracle`] brute-forces small regime spaces
//! for verification.

pub mod cohort;
pub mod config;
pub mod contrast;
pub mod crf;
pub mod error;
pub mod evaluation;
pub mod expansion;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod propensity;
pub mod sim;
pub mod smr;
pub mod tree;
pub mod verify;

pub use cohort::{parse_cohort, Cohort, CohortSchema, Subject};
pub use contrast::{CostMatrix, Method};
pub use crf::StepFunction;
pub use error::{ReclError, Result};
pub use pipeline::{fit_itr, RunConfig};
pub use propensity::{PsFormula, PsModel};
pub use smr::SmrFit;
pub use tree::{Regime, TreeConfig, TreeRegime};
