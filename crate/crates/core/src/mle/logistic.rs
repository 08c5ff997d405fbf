use nalgebra::{DMatrix, DVector};

use super::optim::{self, Objective, Options};
use super::FitResult;
use crate::data::{check_full_rank, Dataset, DesignSpec, ExposureSetting};
use crate::error::{Error, Result};
use crate::model::kernel::{logistic, logit, softplus};

/// Linear predictors beyond this magnitude indicate (quasi-)separation.
const SEPARATION_ETA: f64 = 30.0;

pub(crate) struct LogisticLikelihood<'a> {
    pub x: &'a DMatrix<f64>,
    pub a: &'a [u8],
}

impl Objective for LogisticLikelihood<'_> {
    fn value(&self, alpha: &DVector<f64>) -> f64 {
        let eta = self.x * alpha;
        eta.iter()
            .zip(self.a)
            .map(|(&e, &a)| a as f64 * e - softplus(e))
            .sum()
    }

    fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * alpha;
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.a).map(|(&e, &a)| a as f64 - logistic(e)),
        );
        self.x.tr_mul(&resid)
    }

    fn hessian(&self, alpha: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.x * alpha;
        let mut scaled = self.x.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let p = logistic(eta[i]);
            row *= p * (1.0 - p);
        }
        -(self.x.tr_mul(&scaled))
    }
}

/// Per-observation logistic scores `(A_i − e_i) x_i` as rows.
pub(crate) fn logistic_scores(x: &DMatrix<f64>, a: &[u8], alpha: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * alpha;
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= a[i] as f64 - logistic(eta[i]);
    }
    out
}

/// Log-likelihood and analytic gradient of the exposure model at `alpha`.
pub fn logistic_loglik(data: &Dataset, design: &DesignSpec, alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    let x = design.mean_matrix(data, ExposureSetting::Observed)?;
    if alpha.len() != x.ncols() {
        return Err(Error::Dimension(format!("{} coefficients for {} predictors", alpha.len(), x.ncols())));
    }
    let lik = LogisticLikelihood { x: &x, a: data.exposure() };
    let alpha = DVector::from_column_slice(alpha);
    Ok((lik.value(&alpha), lik.gradient(&alpha).as_slice().to_vec()))
}

/// Maximum-likelihood logistic regression of the exposure on the design's
/// mean covariates.
pub fn fit_logistic(data: &Dataset, design: &DesignSpec) -> Result<FitResult> {
    if design.include_exposure {
        return Err(Error::Domain("the exposure cannot predict itself".into()));
    }
    let x = design.mean_matrix(data, ExposureSetting::Observed)?;
    let names = design.mean_names(data);
    check_full_rank(&x, &names)?;
    let share = data.exposure_share();
    if share == 0.0 || share == 1.0 {
        return Err(Error::NonConvergence(format!(
            "exposure `{}` is constant; logistic regression is separated",
            data.exposure_name()
        )));
    }
    let mut start = DVector::zeros(x.ncols());
    start[0] = logit(share);
    let objective = LogisticLikelihood { x: &x, a: data.exposure() };
    let opt = optim::maximize(&objective, start, &Options::default());
    let max_eta = (&x * &opt.x).amax();
    let mut fit = FitResult::from_optimum(opt, names, None, None);
    if max_eta > SEPARATION_ETA {
        fit.converged = false;
        fit.warnings.push(format!(
            "fitted probabilities numerically 0 or 1 (|linear predictor| = {max_eta:.1}); possible separation"
        ));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intercept_only_matches_logit_of_share() {
        let mut a = vec![1u8; 40];
        a.extend(vec![0u8; 60]);
        let data = Dataset::new(a, vec![0; 100]).unwrap();
        let fit = fit_logistic(&data, &DesignSpec::new::<&str>(&[])).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.estimates[0], (0.4f64 / 0.6).ln(), epsilon = 1e-9);
    }

    #[test]
    fn saturated_binary_covariate_gives_cell_log_odds() {
        // x = 1: 20 exposed, 30 unexposed; x = 0: 10 exposed, 40 unexposed.
        let mut a = Vec::new();
        let mut x = Vec::new();
        for (xv, exposed, unexposed) in [(1.0, 20, 30), (0.0, 10, 40)] {
            a.extend(std::iter::repeat_n(1u8, exposed));
            a.extend(std::iter::repeat_n(0u8, unexposed));
            x.extend(std::iter::repeat_n(xv, exposed + unexposed));
        }
        let n = a.len();
        let data = Dataset::new(a, vec![0; n]).unwrap().with_column("x", x).unwrap();
        let fit = fit_logistic(&data, &DesignSpec::new(&["x"])).unwrap();
        let intercept = (10.0f64 / 40.0).ln();
        let slope = (20.0f64 / 30.0).ln() - intercept;
        assert_relative_eq!(fit.estimates[0], intercept, epsilon = 1e-9);
        assert_relative_eq!(fit.estimates[1], slope, epsilon = 1e-9);
    }

    #[test]
    fn constant_exposure_is_separation() {
        let data = Dataset::new(vec![1; 10], vec![0; 10]).unwrap();
        let err = fit_logistic(&data, &DesignSpec::new::<&str>(&[])).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
    }

    #[test]
    fn perfect_separation_is_flagged() {
        let a = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let data = Dataset::new(a, vec![0; 8]).unwrap().with_column("x", x).unwrap();
        let fit = fit_logistic(&data, &DesignSpec::new(&["x"])).unwrap();
        assert!(!fit.converged);
        assert!(fit.require_converged().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let a: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let data = Dataset::new(a, vec![0; 30]).unwrap().with_column("x", x).unwrap();
        let xm = DesignSpec::new(&["x"]).mean_matrix(&data, ExposureSetting::Observed).unwrap();
        let lik = LogisticLikelihood { x: &xm, a: data.exposure() };
        let alpha = DVector::from_vec(vec![0.3, -1.2]);
        let g = lik.gradient(&alpha);
        let scores = logistic_scores(&xm, data.exposure(), &alpha);
        for j in 0..2 {
            let h = 1e-6;
            let mut up = alpha.clone();
            let mut dn = alpha.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (lik.value(&up) - lik.value(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()));
            assert_relative_eq!(scores.column(j).sum(), g[j], epsilon = 1e-10);
        }
    }
}
