//! Stacked estimating equations, empirical sandwich covariance, delta-method
//! standard errors and Wald intervals.

mod stacks;

pub use stacks::{build_stack, StackSpec};

use nalgebra::{DMatrix, Matrix2};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Condition number of the bread matrix above which it is treated as singular.
const MAX_CONDITION: f64 = 1e10;

/// Which function of the parameter vector is the reported ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// `θ[i1] / θ[i0]`.
    Ratio { i1: usize, i0: usize },
    /// `exp(θ[idx])`.
    LogCoef { idx: usize },
}

type PsiFn<'a> = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a>;

/// A system of per-observation estimating functions solved at `theta_hat`.
pub struct EEStack<'a> {
    pub theta_hat: Vec<f64>,
    pub names: Vec<String>,
    pub target: Target,
    psi: PsiFn<'a>,
}

impl<'a> EEStack<'a> {
    pub fn new(
        theta_hat: Vec<f64>,
        names: Vec<String>,
        target: Target,
        psi: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a,
    ) -> Result<Self> {
        if names.len() != theta_hat.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} parameters",
                names.len(),
                theta_hat.len()
            )));
        }
        let stack = Self {
            theta_hat,
            names,
            target,
            psi: Box::new(psi),
        };
        let dim = stack.theta_hat.len();
        let cols = stack.psi(&stack.theta_hat).ncols();
        if cols != dim {
            return Err(Error::Dimension(format!(
                "estimating function has {cols} components for {dim} parameters"
            )));
        }
        let bad_target = match target {
            Target::Ratio { i1, i0 } => i1.max(i0) >= dim,
            Target::LogCoef { idx } => idx >= dim,
        };
        if bad_target {
            return Err(Error::Dimension("target index outside the parameter vector".into()));
        }
        Ok(stack)
    }

    /// Per-observation estimating functions (rows) at `theta`.
    pub fn psi(&self, theta: &[f64]) -> DMatrix<f64> {
        (self.psi)(theta)
    }

    /// Max-norm of `Σ_i ψ(O_i; θ̂)`.
    pub fn residual_norm(&self) -> f64 {
        self.psi(&self.theta_hat).row_sum().amax()
    }

    /// Point value of the target.
    pub fn target_value(&self) -> f64 {
        match self.target {
            Target::Ratio { i1, i0 } => self.theta_hat[i1] / self.theta_hat[i0],
            Target::LogCoef { idx } => self.theta_hat[idx].exp(),
        }
    }
}

/// Bread, meat, asymptotic covariance `V` and the target's standard error.
#[derive(Debug, Clone)]
pub struct SandwichResult {
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Covariance of the estimates, `V / n`.
    pub cov: DMatrix<f64>,
    pub se_cmr: f64,
}

/// Numeric Jacobian of `n⁻¹ Σ_i ψ` by central differences.
pub fn mean_jacobian(stack: &EEStack<'_>) -> DMatrix<f64> {
    let theta = &stack.theta_hat;
    let dim = theta.len();
    let n = stack.psi(theta).nrows() as f64;
    let step_base = f64::EPSILON.cbrt();
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let h = step_base * (1.0 + theta[j].abs());
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[j] += h;
        dn[j] -= h;
        let diff = stack.psi(&up).row_sum() - stack.psi(&dn).row_sum();
        jac.column_mut(j).copy_from(&(diff.transpose() / (2.0 * h * n)));
    }
    jac
}

/// Empirical sandwich `A⁻¹ B A⁻ᵀ` with a numeric bread.
pub fn sandwich(stack: &EEStack<'_>) -> Result<SandwichResult> {
    let psi = stack.psi(&stack.theta_hat);
    let n = psi.nrows();
    if n == 0 {
        return Err(Error::Data("no observations".into()));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("estimating function is not finite at the solution".into()));
    }
    let meat = psi.tr_mul(&psi) / n as f64;
    let bread = -mean_jacobian(stack);
    let inv = invert_bread(&bread, &stack.names)?;
    let v = &inv * &meat * inv.transpose();
    let cov = &v / n as f64;
    let se_cmr = match stack.target {
        Target::Ratio { i1, i0 } => {
            let block = Matrix2::new(cov[(i1, i1)], cov[(i1, i0)], cov[(i0, i1)], cov[(i0, i0)]);
            delta_ratio_se(stack.theta_hat[i1], stack.theta_hat[i0], &block)?
        }
        Target::LogCoef { idx } => stack.theta_hat[idx].exp() * cov[(idx, idx)].max(0.0).sqrt(),
    };
    Ok(SandwichResult {
        bread,
        meat,
        v,
        cov,
        se_cmr,
    })
}

/// Inverts the bread after row and column equilibration; the condition
/// number is that of the equilibrated matrix.
fn invert_bread(bread: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let dim = bread.nrows();
    let inv_norm = |v: f64| if v > 0.0 && v.is_finite() { 1.0 / v } else { 1.0 };
    let row_scale: Vec<f64> = (0..dim).map(|i| inv_norm(bread.row(i).norm())).collect();
    let mut scaled = bread.clone();
    for i in 0..dim {
        scaled.row_mut(i).scale_mut(row_scale[i]);
    }
    let col_scale: Vec<f64> = (0..dim).map(|j| inv_norm(scaled.column(j).norm())).collect();
    for j in 0..dim {
        scaled.column_mut(j).scale_mut(col_scale[j]);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let (imin, smin) = svd.singular_values.argmin();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_CONDITION {
        let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
        let direction = v_t.row(imin);
        let mut loadings: Vec<(usize, f64)> = direction
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 0.1)
            .map(|(i, v)| (i, *v))
            .collect();
        loadings.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        let directions = loadings
            .iter()
            .map(|(i, v)| format!("{}={v:.3}", names[*i]))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::SingularBread { condition, directions });
    }
    let inner = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Estimation(format!("bread inversion failed: {e}")))?;
    // bread⁻¹ = C (R·bread·C)⁻¹ R
    Ok(DMatrix::from_fn(dim, dim, |i, j| col_scale[i] * inner[(i, j)] * row_scale[j]))
}

/// Delta-method standard error of `λ¹/λ⁰` given the 2×2 covariance of
/// `(λ¹, λ⁰)`.
pub fn delta_ratio_se(lambda1: f64, lambda0: f64, cov: &Matrix2<f64>) -> Result<f64> {
    if !(lambda0 > 0.0) {
        return Err(Error::Domain(format!("denominator mean must be positive, got {lambda0}")));
    }
    let g1 = 1.0 / lambda0;
    let g0 = -lambda1 / (lambda0 * lambda0);
    let var = g1 * g1 * cov[(0, 0)] + 2.0 * g1 * g0 * cov[(0, 1)] + g0 * g0 * cov[(1, 1)];
    Ok(var.max(0.0).sqrt())
}

/// Two-sided normal quantile for a confidence level.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Symmetric Wald interval `estimate ± z·se`.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if se < 0.0 || se.is_nan() {
        return Err(Error::Domain(format!("standard error must be non-negative, got {se}")));
    }
    let z = normal_quantile(level)?;
    Ok((estimate - z * se, estimate + z * se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean_stack(y: &[f64]) -> EEStack<'_> {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        EEStack::new(vec![ybar, 1.0], vec!["mu".into(), "one".into()], Target::Ratio { i1: 0, i0: 1 }, move |t| {
            DMatrix::from_fn(y.len(), 2, |i, j| if j == 0 { y[i] - t[0] } else { 1.0 - t[1] })
        })
        .unwrap()
    }

    #[test]
    fn sample_mean_sandwich_is_population_variance() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let stack = mean_stack(&y);
        let s = sandwich(&stack).unwrap();
        let ybar = y.iter().sum::<f64>() / 6.0;
        let pop_var = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / 6.0;
        assert_relative_eq!(s.v[(0, 0)], pop_var, epsilon = 1e-10);
        assert_relative_eq!(s.bread[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(s.se_cmr, (pop_var / 6.0).sqrt(), epsilon = 1e-10);
        assert!(stack.residual_norm() < 1e-12);
    }

    #[test]
    fn singular_bread_names_direction() {
        let y = [1.0, 2.0, 3.0];
        let stack = EEStack::new(
            vec![2.0, 0.0],
            vec!["mu".into(), "free".into()],
            Target::Ratio { i1: 0, i0: 0 },
            move |t| DMatrix::from_fn(3, 2, |i, _| y[i] - t[0]),
        )
        .unwrap();
        match sandwich(&stack).unwrap_err() {
            Error::SingularBread { directions, .. } => assert!(directions.contains("free")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = EEStack::new(vec![0.0, 0.0], vec!["a".into(), "b".into()], Target::LogCoef { idx: 0 }, |_| {
            DMatrix::zeros(3, 1)
        });
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn delta_method_examples() {
        let unit = delta_ratio_se(1.0, 1.0, &Matrix2::new(0.3, 0.0, 0.0, 0.5)).unwrap();
        assert_relative_eq!(unit, 0.8f64.sqrt(), epsilon = 1e-14);
        let two = delta_ratio_se(2.0, 1.0, &Matrix2::identity()).unwrap();
        assert_relative_eq!(two, 5.0f64.sqrt(), epsilon = 1e-14);
        assert!(delta_ratio_se(1.0, 0.0, &Matrix2::identity()).is_err());
    }

    #[test]
    fn wald_examples() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.95).unwrap();
        assert_relative_eq!(lo, -1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(hi, 1.959963984540054, epsilon = 1e-9);
        assert_eq!(wald_ci(1.3, 0.0, 0.95).unwrap(), (1.3, 1.3));
        let (lo, hi) = wald_ci(1.27, 0.2964, 0.95).unwrap();
        assert!((lo - 0.689).abs() < 5e-4 && (hi - 1.851).abs() < 5e-4);
        assert!(wald_ci(1.0, 0.1, 1.0).is_err());
    }
}
