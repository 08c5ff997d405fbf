//! Estimation of the causal mean ratio (CMR) of a binary exposure on a count
//! outcome.
//!
//! Three families of estimators are provided: inverse probability of
//! treatment weighting, the parametric g-formula and a doubly robust
//! estimator. Each has a variant for outcomes subject to heaping, where
//! some respondents round their count to a multiple of a known grid width.
//! Outcome models cover Poisson, negative binomial, zero-inflated Poisson and
//! zero-inflated negative binomial distributions. Standard errors come from
//! the empirical sandwich variance of the stacked estimating equations.
//!
//! The [`simulate`] module holds the data-generating processes and the Monte
//! Carlo harness used to study bias and coverage.

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod mle;
pub mod model;
pub mod simulate;

pub use data::{Dataset, DesignSpec};
pub use error::{Error, Result};
pub use estimators::{
    cmr_dr, cmr_dr_heap, cmr_iptw, cmr_iptw_heap, cmr_pg, cmr_pg_heap, CmrEstimate, Method, PropensityFit,
    RhatPrediction, WeightTreatment,
};
pub use mle::{fit_count, fit_heaped, fit_logistic, FitResult, OutcomeFit, PiMode};
pub use model::{CountParams, Family, HeapingSpec};
