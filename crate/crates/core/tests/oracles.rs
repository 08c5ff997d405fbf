//! Small datasets whose estimates are re-derived term by term.

use approx::assert_relative_eq;
use cmr_core::*;

const A: [u8; 8] = [1, 0, 1, 1, 0, 0, 1, 0];
const Y: [u64; 8] = [3, 1, 0, 5, 2, 0, 4, 1];
const L: [f64; 8] = [0.5, 1.2, -0.3, 2.0, 0.8, -1.1, 1.5, 0.1];
const E: [f64; 8] = [0.6, 0.3, 0.5, 0.7, 0.4, 0.2, 0.65, 0.35];

fn data() -> Dataset {
    Dataset::new(A.to_vec(), Y.to_vec()).unwrap().with_column("L", L.to_vec()).unwrap()
}

#[test]
fn iptw_hand_arithmetic() {
    let d = data();
    let prop = PropensityFit::known(&d, E.to_vec()).unwrap();
    let est = cmr_iptw(&d, &prop, WeightTreatment::Fixed, 0.95).unwrap();
    let num1 = 3.0 / 0.6 + 0.0 / 0.5 + 5.0 / 0.7 + 4.0 / 0.65;
    let den1 = 1.0 / 0.6 + 1.0 / 0.5 + 1.0 / 0.7 + 1.0 / 0.65;
    let num0 = 1.0 / 0.7 + 2.0 / 0.6 + 0.0 / 0.8 + 1.0 / 0.65;
    let den0 = 1.0 / 0.7 + 1.0 / 0.6 + 1.0 / 0.8 + 1.0 / 0.65;
    let (l1, l0) = (num1 / den1, num0 / den0);
    assert_relative_eq!(est.lambda1, l1, max_relative = 1e-10);
    assert_relative_eq!(est.lambda0, l0, max_relative = 1e-10);
    assert_relative_eq!(est.cmr, l1 / l0, max_relative = 1e-10);

    // Fixed weights: bread diag(mean(AW), mean((1-A)W)); the meat is
    // diagonal because no row is in both arms.
    let n = 8.0;
    let w: Vec<f64> = (0..8).map(|i| if A[i] == 1 { 1.0 / E[i] } else { 1.0 / (1.0 - E[i]) }).collect();
    let (mut b1, mut b0, mut m1, mut m0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..8 {
        if A[i] == 1 {
            b1 += w[i] / n;
            m1 += (w[i] * (Y[i] as f64 - l1)).powi(2) / n;
        } else {
            b0 += w[i] / n;
            m0 += (w[i] * (Y[i] as f64 - l0)).powi(2) / n;
        }
    }
    let (v1, v0) = (m1 / (b1 * b1) / n, m0 / (b0 * b0) / n);
    let se = ((v1 / (l0 * l0)) + (l1 * l1 / l0.powi(4)) * v0).sqrt();
    assert_relative_eq!(est.se, se, max_relative = 1e-8);
}

fn poisson_fit() -> (OutcomeFit, [f64; 3]) {
    let d = data();
    let fit = fit_count(&d, Family::Poisson, &DesignSpec::new(&["L"]).with_exposure(), None).unwrap();
    let b = [
        fit.coefficient("(Intercept)").unwrap(),
        fit.coefficient("L").unwrap(),
        fit.coefficient("A").unwrap(),
    ];
    // Score equations Σ x (y − μ) = 0 at the reported coefficients.
    let mut score = [0.0; 3];
    for i in 0..8 {
        let mu = (b[0] + b[1] * L[i] + b[2] * A[i] as f64).exp();
        let r = Y[i] as f64 - mu;
        score[0] += r;
        score[1] += L[i] * r;
        score[2] += A[i] as f64 * r;
    }
    assert!(score.iter().all(|s| s.abs() < 1e-8), "{score:?}");
    (fit, b)
}

fn hand_means(b: &[f64; 3], a: f64) -> Vec<f64> {
    L.iter().map(|l| (b[0] + b[1] * l + b[2] * a).exp()).collect()
}

#[test]
fn g_formula_hand_arithmetic() {
    let d = data();
    let (fit, b) = poisson_fit();
    let est = cmr_pg(&d, &fit, 0.95).unwrap();
    let l1 = hand_means(&b, 1.0).iter().sum::<f64>() / 8.0;
    let l0 = hand_means(&b, 0.0).iter().sum::<f64>() / 8.0;
    assert_relative_eq!(est.lambda1, l1, max_relative = 1e-10);
    assert_relative_eq!(est.lambda0, l0, max_relative = 1e-10);
    // Main-effects log-linear model: the ratio is exp(coefficient of A).
    assert_relative_eq!(est.cmr, b[2].exp(), max_relative = 1e-10);
}

#[test]
fn doubly_robust_hand_arithmetic() {
    let d = data();
    let (fit, b) = poisson_fit();
    let prop = PropensityFit::known(&d, E.to_vec()).unwrap();
    let est = cmr_dr(&d, &prop, &fit, 0.95).unwrap();
    let (m1, m0) = (hand_means(&b, 1.0), hand_means(&b, 0.0));
    let mut l1 = 0.0;
    let mut l0 = 0.0;
    for i in 0..8 {
        let (a, y, e) = (A[i] as f64, Y[i] as f64, E[i]);
        l1 += (a * y - (a - e) * m1[i]) / e / 8.0;
        l0 += ((1.0 - a) * y + (a - e) * m0[i]) / (1.0 - e) / 8.0;
    }
    assert_relative_eq!(est.lambda1, l1, max_relative = 1e-10);
    assert_relative_eq!(est.lambda0, l0, max_relative = 1e-10);
    assert_relative_eq!(est.cmr, l1 / l0, max_relative = 1e-10);
}

#[test]
fn constant_propensity_iptw_is_arm_mean_ratio() {
    let d = data();
    let prop = PropensityFit::fit(&d, &DesignSpec::new::<&str>(&[])).unwrap();
    let est = cmr_iptw(&d, &prop, WeightTreatment::Estimated, 0.95).unwrap();
    let mean1 = (3.0 + 0.0 + 5.0 + 4.0) / 4.0;
    let mean0 = (1.0 + 2.0 + 0.0 + 1.0) / 4.0;
    assert_relative_eq!(est.cmr, mean1 / mean0, max_relative = 1e-10);
}

fn zip_loglik(y: &[u64], log_mu: f64, logit_nu: f64) -> f64 {
    let mu = log_mu.exp();
    let nu = 1.0 / (1.0 + (-logit_nu).exp());
    y.iter()
        .map(|&v| {
            if v == 0 {
                (nu + (1.0 - nu) * (-mu).exp()).ln()
            } else {
                let ln_fact: f64 = (1..=v).map(|k| (k as f64).ln()).sum();
                (1.0 - nu).ln() - mu + v as f64 * mu.ln() - ln_fact
            }
        })
        .sum()
}

#[test]
fn zip_intercept_only_matches_grid_search() {
    let y: Vec<u64> = vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 2, 3, 3, 3, 4, 4, 5, 2, 1, 6, 3, 4, 2, 3, 0, 5];
    let n = y.len();
    let d = Dataset::new((0..n).map(|i| (i % 2) as u8).collect(), y.clone()).unwrap();
    let fit = fit_count(&d, Family::Zip, &DesignSpec::new::<&str>(&[]), None).unwrap();
    assert!(fit.fit.converged);
    let (b, g) = (fit.fit.estimates[0], fit.fit.estimates[1]);

    // Coarse-to-fine grid over (log mu, logit nu).
    let (mut c0, mut c1, mut half) = (0.0, 0.0, 3.0);
    while half > 1e-5 {
        let mut best = (f64::NEG_INFINITY, c0, c1);
        for i in 0..=40 {
            for j in 0..=40 {
                let p0 = c0 - half + 2.0 * half * i as f64 / 40.0;
                let p1 = c1 - half + 2.0 * half * j as f64 / 40.0;
                let ll = zip_loglik(&y, p0, p1);
                if ll > best.0 {
                    best = (ll, p0, p1);
                }
            }
        }
        (c0, c1) = (best.1, best.2);
        half /= 4.0;
    }
    assert!((b - c0).abs() < 1e-3, "log mu {b} vs grid {c0}");
    assert!((g - c1).abs() < 1e-3, "logit nu {g} vs grid {c1}");
    assert_relative_eq!(fit.fit.loglik, zip_loglik(&y, b, g), max_relative = 1e-12);
}
