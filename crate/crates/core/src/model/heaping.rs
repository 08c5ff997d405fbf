use std::ops::RangeInclusive;

use super::kernel::{self, HeapWeights};
use super::{CountParams, Family};
use crate::error::{Error, Result};

/// Heaping mechanism: with probability `pi` the exact count is reported,
/// otherwise the count rounded to the nearest multiple of `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeapingSpec {
    pub eta: u64,
    pub pi: f64,
}

impl HeapingSpec {
    pub fn new(eta: u64, pi: f64) -> Result<Self> {
        let spec = Self { eta, pi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta == 0 {
            return Err(Error::Domain("grid width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::Domain(format!("exact-report probability must lie in [0, 1], got {}", self.pi)));
        }
        Ok(())
    }
}

/// Rounds `y` to the nearest multiple of `eta`; exact midpoints round away
/// from zero.
pub fn round_to_grid(y: u64, eta: u64) -> u64 {
    assert!(eta >= 1, "grid width must be at least 1");
    (y + eta / 2) / eta * eta
}

/// All counts that round to `y_h`. Empty when `y_h` is off the grid.
pub fn preimage(y_h: u64, eta: u64) -> RangeInclusive<u64> {
    match kernel::preimage_bounds(y_h, eta) {
        Some((lo, hi)) => lo..=hi,
        #[allow(clippy::reversed_empty_ranges)]
        None => 1..=0,
    }
}

/// Probability of reporting `y_h`: `π f(y_h) + (1 − π) Σ_{y: h(y) = y_h} f(y)`.
pub fn heaped_mass(y_h: u64, family: Family, params: &CountParams, heap: &HeapingSpec) -> Result<f64> {
    heap.validate()?;
    params.validate()?;
    let weights = HeapWeights::from_pi(heap.eta, heap.pi);
    Ok(kernel::heaped_log_mass_grad(family, y_h, &params.local(), &weights).0.exp())
}

/// Heaped log-likelihood of independent reports, each with its own
/// distribution parameters.
pub fn heaped_loglik(observations: &[(u64, CountParams)], family: Family, heap: &HeapingSpec) -> Result<f64> {
    heap.validate()?;
    let weights = HeapWeights::from_pi(heap.eta, heap.pi);
    let mut total = 0.0;
    for (row, (y_h, params)) in observations.iter().enumerate() {
        params.validate()?;
        let lm = kernel::heaped_log_mass_grad(family, *y_h, &params.local(), &weights).0;
        if lm == f64::NEG_INFINITY {
            return Err(Error::ZeroMass { row });
        }
        total += lm;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pmf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rounding_examples() {
        assert_eq!(round_to_grid(23, 10), 20);
        assert_eq!(round_to_grid(15, 10), 20);
        assert_eq!(round_to_grid(14, 10), 10);
        assert_eq!(round_to_grid(4, 10), 0);
        assert_eq!(round_to_grid(5, 10), 10);
        assert_eq!(round_to_grid(20, 1), 20);
        assert_eq!(round_to_grid(2, 3), 3);
        assert_eq!(round_to_grid(1, 3), 0);
    }

    #[test]
    fn exact_report_limit_is_pmf() {
        let params = CountParams::new(3.5, 0.2, 0.4).unwrap();
        for family in Family::ALL {
            for y in [0, 3, 10, 20, 27] {
                let heaped = heaped_mass(y, family, &params, &HeapingSpec::new(10, 1.0).unwrap()).unwrap();
                assert!((heaped - pmf(family, &params, y).unwrap()).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn identity_grid_is_pmf() {
        let params = CountParams::new(6.0, 0.1, 0.3).unwrap();
        for family in Family::ALL {
            for y in 0..30 {
                let heaped = heaped_mass(y, family, &params, &HeapingSpec::new(1, 0.4).unwrap()).unwrap();
                assert!((heaped - pmf(family, &params, y).unwrap()).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn poisson_zero_report_by_enumeration() {
        let params = CountParams::poisson(2.0);
        let f = |y: u64| {
            let mut fact = 1.0;
            for k in 1..=y {
                fact *= k as f64;
            }
            2.0f64.powi(y as i32) * (-2.0f64).exp() / fact
        };
        let expected = 0.4 * f(0) + 0.6 * (0..=4).map(f).sum::<f64>();
        let got = heaped_mass(0, Family::Poisson, &params, &HeapingSpec::new(10, 0.4).unwrap()).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-14);
    }

    #[test]
    fn off_grid_reports_only_carry_exact_mass() {
        let params = CountParams::poisson(6.0);
        let got = heaped_mass(7, Family::Poisson, &params, &HeapingSpec::new(10, 0.4).unwrap()).unwrap();
        assert_relative_eq!(got, 0.4 * pmf(Family::Poisson, &params, 7).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn heaped_mass_conserves_total_probability() {
        let heap = HeapingSpec::new(10, 0.4).unwrap();
        let cases = [
            (Family::Poisson, CountParams::poisson(4.0)),
            (Family::NegBin, CountParams::new(12.0, 0.0, 0.2).unwrap()),
            (Family::Zip, CountParams::new(8.0, 0.3, 0.0).unwrap()),
            (Family::Zinb, CountParams::new(5.0, 0.2, 0.8).unwrap()),
        ];
        for (family, params) in cases {
            let ymax = crate::model::conditional_mean(family, &params)
                + 20.0 * crate::model::variance(family, &params).sqrt();
            let ymax = (ymax / 10.0).ceil() as u64 * 10 + 10;
            let total: f64 = (0..=ymax)
                .map(|y| heaped_mass(y, family, &params, &heap).unwrap())
                .sum();
            assert!((1.0 - total).abs() < 1e-10, "{family}: {total}");
        }
    }

    #[test]
    fn loglik_sums_and_flags_zero_mass() {
        let p = CountParams::poisson(2.0);
        let heap = HeapingSpec::new(10, 1.0).unwrap();
        let single = heaped_loglik(&[(3, p)], Family::Poisson, &heap).unwrap();
        assert_relative_eq!(single, pmf(Family::Poisson, &p, 3).unwrap().ln(), max_relative = 1e-14);
        let double = heaped_loglik(&[(3, p), (3, p)], Family::Poisson, &heap).unwrap();
        assert_relative_eq!(double, 2.0 * single, max_relative = 1e-14);

        // π = 0 puts no mass off the grid.
        let rounded_only = HeapingSpec::new(10, 0.0).unwrap();
        let err = heaped_loglik(&[(10, p), (7, p)], Family::Poisson, &rounded_only).unwrap_err();
        assert_eq!(err, Error::ZeroMass { row: 1 });
    }

    #[test]
    fn loglik_matches_hand_summed_masses() {
        let heap = HeapingSpec::new(10, 0.4).unwrap();
        let p = CountParams::poisson(2.0);
        let ys = [0u64, 2, 10, 3, 0];
        let obs: Vec<_> = ys.iter().map(|&y| (y, p)).collect();
        let expected: f64 = ys
            .iter()
            .map(|&y| {
                let exact = 0.4 * pmf(Family::Poisson, &p, y).unwrap();
                let rounded: f64 = if y % 10 == 0 {
                    (0..200u64).filter(|&t| round_to_grid(t, 10) == y).map(|t| pmf(Family::Poisson, &p, t).unwrap()).sum()
                } else {
                    0.0
                };
                (exact + 0.6 * rounded).ln()
            })
            .sum();
        let got = heaped_loglik(&obs, Family::Poisson, &heap).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-13);
    }

    proptest! {
        #[test]
        fn preimage_matches_brute_force(y_h in 0u64..200, eta in 1u64..25) {
            let brute: Vec<u64> = (0..260).filter(|&y| round_to_grid(y, eta) == y_h).collect();
            let fast: Vec<u64> = preimage(y_h, eta).collect();
            prop_assert_eq!(brute, fast);
        }

        #[test]
        fn rounding_is_nearest_multiple(y in 0u64..10_000, eta in 1u64..50) {
            let r = round_to_grid(y, eta);
            prop_assert_eq!(r % eta, 0);
            prop_assert!(2 * r.abs_diff(y) <= eta);
        }
    }
}
