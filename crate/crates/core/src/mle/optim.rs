//! Damped Newton ascent with backtracking line search.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Objective {
    /// Objective value; `-inf` marks an infeasible point.
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub(crate) struct Options {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Gradient max-norm tolerance, relative to `1 + |f|`.
    pub grad_tol: f64,
    pub max_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-9,
            grad_tol: 1e-5,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Optimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub message: Option<String>,
}

/// Solves `(−H + τI) d = g`, raising τ until the system is positive definite.
fn ascent_direction(hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    let neg = -hessian;
    let scale = neg.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let mut tau = 0.0;
    for _ in 0..40 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += tau;
        }
        if let Some(chol) = m.cholesky() {
            let d = chol.solve(gradient);
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        tau = if tau == 0.0 { scale * 1e-10 } else { tau * 10.0 };
    }
    gradient / scale
}

/// One full Newton step from a converged point, kept unless it loses
/// ground beyond rounding. Squares the remaining parameter error.
fn polish(objective: &impl Objective, x: DVector<f64>, f: f64, g: DVector<f64>) -> (DVector<f64>, f64, DVector<f64>) {
    let d = ascent_direction(&objective.hessian(&x), &g);
    let candidate = &x + d;
    let fc = objective.value(&candidate);
    let resolution = 64.0 * f64::EPSILON * (1.0 + f.abs());
    if fc.is_finite() && fc >= f - resolution {
        let gc = objective.gradient(&candidate);
        if gc.iter().all(|v| v.is_finite()) {
            return (candidate, fc, gc);
        }
    }
    (x, f, g)
}

pub(crate) fn maximize(objective: &impl Objective, start: DVector<f64>, opts: &Options) -> Optimum {
    let mut x = start;
    let mut f = objective.value(&x);
    if !f.is_finite() {
        return Optimum {
            gradient_norm: f64::NAN,
            x,
            value: f,
            converged: false,
            iterations: 0,
            message: Some("objective is not finite at the starting values".into()),
        };
    }
    let mut g = objective.gradient(&x);
    let mut last_rel = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let gnorm = g.amax();
        if !gnorm.is_finite() {
            return Optimum {
                x,
                value: f,
                gradient_norm: gnorm,
                converged: false,
                iterations: iteration - 1,
                message: Some("gradient is not finite".into()),
            };
        }
        if last_rel < opts.rel_tol && gnorm < opts.grad_tol * (1.0 + f.abs()) {
            let (x, f, g) = polish(objective, x, f, g);
            return Optimum {
                gradient_norm: g.amax(),
                x,
                value: f,
                converged: true,
                iterations: iteration - 1,
                message: None,
            };
        }
        let h = objective.hessian(&x);
        let mut d = ascent_direction(&h, &g);
        let dmax = d.amax();
        if dmax > opts.max_step {
            d *= opts.max_step / dmax;
        }
        let slope = g.dot(&d);
        // Gains below this are invisible in the objective's rounding.
        let resolution = 64.0 * f64::EPSILON * (1.0 + f.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let candidate = &x + &d * step;
            let fc = objective.value(&candidate);
            let sufficient = fc >= f + 1e-4 * step * slope;
            let unresolved = slope * step <= resolution && fc >= f - resolution;
            if fc.is_finite() && (sufficient || unresolved) {
                accepted = Some((candidate, fc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, fc)) => {
                last_rel = (fc - f).abs() / (1.0 + f.abs());
                x = candidate;
                f = fc;
                g = objective.gradient(&x);
            }
            None => {
                // No ascent is possible at working precision.
                let converged = gnorm < opts.grad_tol * (1.0 + f.abs());
                return Optimum {
                    x,
                    value: f,
                    gradient_norm: gnorm,
                    converged,
                    iterations: iteration,
                    message: (!converged).then(|| "line search failed to improve the objective".to_string()),
                };
            }
        }
    }
    let gnorm = g.amax();
    let converged = last_rel < opts.rel_tol && gnorm < opts.grad_tol * (1.0 + f.abs());
    Optimum {
        x,
        value: f,
        gradient_norm: gnorm,
        converged,
        iterations: opts.max_iter,
        message: (!converged).then(|| format!("no convergence after {} iterations", opts.max_iter)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Objective for Quadratic {
        fn value(&self, x: &DVector<f64>) -> f64 {
            -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 3.0).powi(2) - (x[0] - 1.0) * (x[1] + 3.0)
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![
                -2.0 * (x[0] - 1.0) - (x[1] + 3.0),
                -4.0 * (x[1] + 3.0) - (x[0] - 1.0),
            ])
        }
        fn hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, -1.0, -4.0])
        }
    }

    /// exp-shaped objective that is not concave everywhere.
    struct Bumpy;

    impl Objective for Bumpy {
        fn value(&self, x: &DVector<f64>) -> f64 {
            -(x[0].powi(4)) + 2.0 * x[0].powi(2) - x[0] * 0.3
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![-4.0 * x[0].powi(3) + 4.0 * x[0] - 0.3])
        }
        fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, -12.0 * x[0].powi(2) + 4.0)
        }
    }

    #[test]
    fn finds_quadratic_maximum() {
        let opt = maximize(&Quadratic, DVector::from_vec(vec![10.0, 10.0]), &Options::default());
        assert!(opt.converged);
        assert!((opt.x[0] - 1.0).abs() < 1e-8 && (opt.x[1] + 3.0).abs() < 1e-8);
    }

    #[test]
    fn escapes_region_of_positive_curvature() {
        let opt = maximize(&Bumpy, DVector::from_vec(vec![0.0]), &Options::default());
        assert!(opt.converged);
        assert!(opt.gradient_norm < 1e-5);
        assert!(Bumpy.hessian(&opt.x)[(0, 0)] < 0.0);
    }
}
