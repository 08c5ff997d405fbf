//! Analytic scores against central differences at random parameter points.

use cmr_core::mle::{logistic_loglik, Heaping, OutcomeLikelihood};
use cmr_core::simulate::{apply_misspec, gen_heaping, gen_partners, Design, Misspec, Role};
use cmr_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 20;

/// Central difference with one Richardson extrapolation step, so the
/// truncation error is fourth order in the step.
fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], j: usize) -> f64 {
    let at = |h: f64| {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    };
    let h = 1e-4 * (1.0 + theta[j].abs());
    (4.0 * at(h / 2.0) - at(h)) / 3.0
}

fn agree(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 * analytic.abs().max(numeric.abs()).max(1.0)
}

/// Random point near a plausible region: intercept on the log-mean scale,
/// small slopes, moderate dispersion and zero-inflation.
fn random_point(rng: &mut ChaCha8Rng, names: &[String]) -> Vec<f64> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "(Intercept)" => rng.random_range(-1.0..1.5),
            "zero:(Intercept)" => rng.random_range(-2.0..0.5),
            "log(theta)" => rng.random_range(-2.0..0.5),
            "logit(pi)" => rng.random_range(-2.0..2.0),
            "L1" | "zero:L1" => rng.random_range(-0.05..0.05),
            _ => rng.random_range(-0.5..0.5),
        })
        .collect()
}

fn check(lik: &OutcomeLikelihood, rng: &mut ChaCha8Rng, label: &str) {
    for _ in 0..POINTS {
        let theta = random_point(rng, lik.names());
        let grad = lik.gradient(&theta).unwrap();
        let scores = lik.scores(&theta).unwrap();
        for j in 0..theta.len() {
            let fd = central_difference(|t| lik.loglik(t).unwrap(), &theta, j);
            assert!(
                agree(grad[j], fd),
                "{label} {}: analytic {} numeric {fd}",
                lik.names()[j],
                grad[j]
            );
            assert!(agree(scores.column(j).sum(), grad[j]));
        }
    }
}

#[test]
fn count_family_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for family in Family::ALL {
        let sim = gen_partners(200, family, 62);
        let design = apply_misspec(Design::Partners, family, Misspec::None, Role::Outcome);
        let lik = OutcomeLikelihood::new(&sim.data, family, &design, None, None).unwrap();
        check(&lik, &mut rng, family.name());
    }
}

#[test]
fn heaped_family_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let sim = gen_heaping(200, 64);
    let design = apply_misspec(Design::Heaping, Family::Poisson, Misspec::None, Role::Outcome)
        .with_susceptibility(&["L4"]);
    for family in Family::ALL {
        let heaping = Some(Heaping { eta: 10, pi: PiMode::Free });
        let lik = OutcomeLikelihood::new(&sim.data, family, &design, heaping, None).unwrap();
        check(&lik, &mut rng, &format!("heaped {family}"));
    }
}

#[test]
fn weighted_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let sim = gen_heaping(200, 66);
    let weights: Vec<f64> = (0..200).map(|i| 1.0 + (i % 7) as f64 / 3.0).collect();
    let design = DesignSpec::new::<&str>(&[]).with_exposure();
    for family in [Family::Poisson, Family::NegBin] {
        let heaping = Some(Heaping { eta: 10, pi: PiMode::Free });
        let lik = OutcomeLikelihood::new(&sim.data, family, &design, heaping, Some(&weights)).unwrap();
        for _ in 0..POINTS {
            let theta = random_point(&mut rng, lik.names());
            let grad = lik.gradient(&theta).unwrap();
            for j in 0..theta.len() {
                let fd = central_difference(|t| lik.loglik(t).unwrap(), &theta, j);
                assert!(agree(grad[j], fd), "weighted {family}: {} vs {fd}", grad[j]);
            }
        }
    }
}

#[test]
fn logistic_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let sim = gen_partners(300, Family::Poisson, 68);
    let design = DesignSpec::new(&["L1", "L2", "L3"]);
    for _ in 0..POINTS {
        let alpha: Vec<f64> = vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let (_, grad) = logistic_loglik(&sim.data, &design, &alpha).unwrap();
        for j in 0..alpha.len() {
            let fd = central_difference(|t| logistic_loglik(&sim.data, &design, t).unwrap().0, &alpha, j);
            assert!(agree(grad[j], fd), "logistic {j}: {} vs {fd}", grad[j]);
        }
    }
}
