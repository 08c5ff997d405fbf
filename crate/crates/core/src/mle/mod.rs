//! Maximum-likelihood fitting of the exposure and outcome models.

mod count;
mod logistic;
pub(crate) mod optim;

pub use count::{fit_count, fit_heaped, Heaping, OutcomeFit, OutcomeLikelihood, PiMode};
pub(crate) use count::CountLikelihood;
pub use logistic::{fit_logistic, logistic_loglik};
pub(crate) use logistic::logistic_scores;

use serde::Serialize;

use crate::error::{Error, Result};
use optim::Optimum;

/// Result of a maximum-likelihood fit. Estimates are on the optimization
/// scale (log dispersion, logit exact-report probability).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub estimates: Vec<f64>,
    pub names: Vec<String>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
    pub n_params: usize,
    pub dispersion: Option<f64>,
    pub pi: Option<f64>,
}

impl FitResult {
    pub(crate) fn from_optimum(opt: Optimum, names: Vec<String>, dispersion: Option<f64>, pi: Option<f64>) -> Self {
        let warnings = opt.message.into_iter().collect();
        Self {
            n_params: opt.x.len(),
            estimates: opt.x.as_slice().to_vec(),
            names,
            loglik: opt.value,
            converged: opt.converged,
            iterations: opt.iterations,
            gradient_norm: opt.gradient_norm,
            warnings,
            dispersion,
            pi,
        }
    }

    /// Errors unless the optimizer reported convergence.
    pub fn require_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            let why = self.warnings.join("; ");
            Err(Error::NonConvergence(if why.is_empty() {
                "optimizer did not converge".to_string()
            } else {
                why
            }))
        }
    }

    /// Akaike information criterion with the fitted parameter count.
    pub fn aic(&self) -> Result<f64> {
        aic(self, self.n_params)
    }
}

/// `2k − 2ℓ̂`; refuses fits that did not converge.
pub fn aic(fit: &FitResult, k: usize) -> Result<f64> {
    fit.require_converged()?;
    Ok(2.0 * k as f64 - 2.0 * fit.loglik)
}
