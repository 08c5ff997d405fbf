//! Count distributions and the heaped-report mixture likelihood.

mod heaping;
pub(crate) mod kernel;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kernel::Local;

pub use heaping::{heaped_loglik, heaped_mass, preimage, round_to_grid, HeapingSpec};

/// Outcome distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    NegBin,
    Zip,
    Zinb,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Poisson, Family::NegBin, Family::Zip, Family::Zinb];

    pub fn is_zero_inflated(self) -> bool {
        matches!(self, Family::Zip | Family::Zinb)
    }

    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::NegBin | Family::Zinb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBin => "negbin",
            Family::Zip => "zip",
            Family::Zinb => "zinb",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "negbin" | "nb" | "negative_binomial" => Ok(Family::NegBin),
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            other => Err(Error::Domain(format!("unknown family `{other}`"))),
        }
    }
}

/// Parameters of a single count distribution.
///
/// `mu` is the mean of the count part (for zero-inflated families, the mean
/// within the susceptible population), `nu` the probability of not being
/// susceptible and `theta` the dispersion, with `Var = mu + mu² theta` for
/// the negative binomial. Slots a family does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountParams {
    pub mu: f64,
    pub nu: f64,
    pub theta: f64,
}

impl CountParams {
    pub fn new(mu: f64, nu: f64, theta: f64) -> Result<Self> {
        let p = Self { mu, nu, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn poisson(mu: f64) -> Self {
        Self { mu, nu: 0.0, theta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("mean must be positive and finite, got {}", self.mu)));
        }
        if !(0.0..1.0).contains(&self.nu) {
            return Err(Error::Domain(format!("zero-inflation probability must lie in [0, 1), got {}", self.nu)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Domain(format!("dispersion must be non-negative, got {}", self.theta)));
        }
        Ok(())
    }

    pub(crate) fn local(&self) -> Local {
        Local {
            log_mu: self.mu.ln(),
            zeta: kernel::logit(self.nu),
            log_theta: self.theta.ln(),
        }
    }
}

/// Probability mass at `y`.
pub fn pmf(family: Family, params: &CountParams, y: u64) -> Result<f64> {
    Ok(log_pmf(family, params, y)?.exp())
}

/// Log probability mass at `y`, evaluated entirely in log space.
pub fn log_pmf(family: Family, params: &CountParams, y: u64) -> Result<f64> {
    params.validate()?;
    Ok(kernel::log_pmf_grad(family, y, &params.local()).0)
}

/// Mean of the count outcome: `mu`, or `(1 − nu) mu` under zero-inflation.
pub fn conditional_mean(family: Family, params: &CountParams) -> f64 {
    if family.is_zero_inflated() {
        (1.0 - params.nu) * params.mu
    } else {
        params.mu
    }
}

/// Variance of the count outcome.
pub fn variance(family: Family, params: &CountParams) -> f64 {
    let theta = if family.has_dispersion() { params.theta } else { 0.0 };
    let count_var = params.mu + params.mu * params.mu * theta;
    if family.is_zero_inflated() {
        let nu = params.nu;
        (1.0 - nu) * (count_var + nu * params.mu * params.mu)
    } else {
        count_var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_at_zero() {
        let p = pmf(Family::Poisson, &CountParams::poisson(1.0), 0).unwrap();
        assert_relative_eq!(p, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(p, 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn zip_at_zero_adds_structural_zeros() {
        let params = CountParams::new(2.0, 0.3, 0.0).unwrap();
        let p = pmf(Family::Zip, &params, 0).unwrap();
        assert_relative_eq!(p, 0.3 + 0.7 * (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(p, 0.394734, epsilon = 1e-6);
        let p3 = pmf(Family::Zip, &params, 3).unwrap();
        let poisson3 = pmf(Family::Poisson, &CountParams::poisson(2.0), 3).unwrap();
        assert_relative_eq!(p3, 0.7 * poisson3, epsilon = 1e-15);
    }

    /// Reference negative binomial mass: C(y + size − 1, y) p^size (1 − p)^y
    /// with size = 1/θ and p = size / (size + μ), the binomial coefficient
    /// built as a running product.
    fn reference_negbin(mu: f64, theta: f64, y: u64) -> f64 {
        let size = 1.0 / theta;
        let p = size / (size + mu);
        let mut coef = 1.0;
        for j in 0..y {
            coef *= (size + j as f64) / (j as f64 + 1.0);
        }
        coef * p.powf(size) * (1.0 - p).powi(y as i32)
    }

    #[test]
    fn negbin_matches_reference_product_form() {
        let params = CountParams::new(2.0, 0.0, 0.5).unwrap();
        let p = pmf(Family::NegBin, &params, 3).unwrap();
        // size 2, prob 1/2: C(4,3)·(1/2)^2·(1/2)^3 = 4/32
        assert_relative_eq!(reference_negbin(2.0, 0.5, 3), 0.125, epsilon = 1e-15);
        assert_relative_eq!(p, 0.125, epsilon = 1e-13);
        for (mu, theta) in [(0.3, 2.0), (7.5, 0.1), (40.0, 0.5)] {
            let params = CountParams::new(mu, 0.0, theta).unwrap();
            for y in [0, 1, 4, 20, 90] {
                let ours = pmf(Family::NegBin, &params, y).unwrap();
                let reference = reference_negbin(mu, theta, y);
                assert_relative_eq!(ours, reference, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn zinb_is_zero_inflated_negbin() {
        let params = CountParams::new(3.0, 0.2, 0.7).unwrap();
        let nb0 = reference_negbin(3.0, 0.7, 0);
        assert_relative_eq!(pmf(Family::Zinb, &params, 0).unwrap(), 0.2 + 0.8 * nb0, epsilon = 1e-14);
        assert_relative_eq!(pmf(Family::Zinb, &params, 5).unwrap(), 0.8 * reference_negbin(3.0, 0.7, 5), max_relative = 1e-12);
    }

    #[test]
    fn conditional_means() {
        assert_eq!(conditional_mean(Family::Poisson, &CountParams::poisson(3.0)), 3.0);
        assert_eq!(conditional_mean(Family::Zip, &CountParams::new(4.0, 0.5, 0.0).unwrap()), 2.0);
        assert_eq!(conditional_mean(Family::Zinb, &CountParams::new(8.0, 0.25, 0.5).unwrap()), 6.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(CountParams::new(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(CountParams::new(1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(CountParams::new(1.0, 0.0, -0.1), Err(Error::Domain(_))));
        let bad = CountParams { mu: -1.0, nu: 0.0, theta: 0.0 };
        assert!(pmf(Family::Poisson, &bad, 1).is_err());
    }

    #[test]
    fn large_counts_do_not_underflow_in_log_space() {
        let lp = log_pmf(Family::Poisson, &CountParams::poisson(5.0), 2000).unwrap();
        assert!(lp.is_finite() && lp < -5000.0);
    }

    fn tail_limit(family: Family, params: &CountParams) -> u64 {
        (conditional_mean(family, params) + 20.0 * variance(family, params).sqrt()).ceil() as u64 + 1
    }

    #[test]
    fn mass_sums_to_one_below_tail_limit() {
        let grid = [
            (Family::Poisson, CountParams::poisson(0.2)),
            (Family::Poisson, CountParams::poisson(12.0)),
            (Family::NegBin, CountParams::new(2.0, 0.0, 0.5).unwrap()),
            (Family::NegBin, CountParams::new(30.0, 0.0, 0.5).unwrap()),
            (Family::Zip, CountParams::new(5.0, 0.4, 0.0).unwrap()),
            (Family::Zinb, CountParams::new(10.0, 0.1, 0.5).unwrap()),
        ];
        for (family, params) in grid {
            let ymax = tail_limit(family, &params);
            let total: f64 = (0..=ymax).map(|y| pmf(family, &params, y).unwrap()).sum();
            assert!((1.0 - total).abs() < 1e-10, "{family} {params:?}: total {total}");
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("ZINB".parse::<Family>().unwrap(), Family::Zinb);
        assert_eq!("nb".parse::<Family>().unwrap(), Family::NegBin);
        assert!("gamma".parse::<Family>().is_err());
    }
}
