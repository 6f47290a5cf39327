//! Strategic classification under a confounded causal model.
//!
//! Agents carry causal features `x_c`, spurious features `x_s`, a latent
//! binary confounder `u` and an outcome `y` that depends only on
//! `(x_c, u)`. An institution deploys a linear decision rule, agents best
//! respond under a weighted `L_p` cost with budget `delta`, and the modules
//! here measure what that adaptation does to 0-1 loss, cross-entropy risk
//! and to the utilities of both sides.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled; file formats, the CLI and experiment orchestration live in the
//! companion `causalstrat-bench` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;

pub mod align;
pub mod classify;
pub mod error;
pub mod geometry;
pub mod math;
pub mod respond;
pub mod risk;
pub mod rng;
pub mod scm;
pub mod search;

pub use align::{AlignmentReport, Role, TransitionLedger, UtilityParams};
pub use classify::{DecisionRule, LinearScorer, ProbEstimator, Threshold};
pub use error::{Error, Result};
pub use geometry::{AmbiguityBounds, MaxGap};
pub use respond::{BestResponse, CostNorm, CostSpec, ResponsePlan};
pub use risk::{CeDecomposition, ConfusionCounts};
pub use scm::{Agent, Features, OutcomeMode, Population, ScmConfig};
pub use search::{FitConfig, GridSpec, Objective};
