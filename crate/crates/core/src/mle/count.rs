//! Count-outcome likelihoods (plain, zero-inflated and heaped) and their fits.

use nalgebra::{DMatrix, DVector};

use super::optim::{self, Objective, Options};
use super::FitResult;
use crate::data::{check_full_rank, Dataset, DesignSpec, ExposureSetting};
use crate::error::{Error, Result};
use crate::model::kernel::{
    self, logistic, logit, HeapWeights, Local, LOGIT_PI, LOG_MU, LOG_THETA, N_LOCAL, ZETA,
};
use crate::model::Family;

/// How the exact-report probability is treated in a heaped fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiMode {
    Free,
    Fixed(f64),
}

/// Heaping block of an outcome model: known grid width, exact-report
/// probability free or fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heaping {
    pub eta: u64,
    pub pi: PiMode,
}

/// |logit π̂| beyond this is reported as a boundary estimate.
const PI_BOUNDARY_LOGIT: f64 = 12.0;

/// Parameter vector layout: count coefficients, susceptibility coefficients,
/// log dispersion, logit exact-report probability.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamLayout {
    pub n_count: usize,
    pub n_zero: usize,
    pub log_theta: bool,
    pub logit_pi: bool,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        self.n_count + self.n_zero + self.log_theta as usize + self.logit_pi as usize
    }

    pub fn theta_index(&self) -> Option<usize> {
        self.log_theta.then_some(self.n_count + self.n_zero)
    }

    pub fn pi_index(&self) -> Option<usize> {
        self.logit_pi
            .then_some(self.n_count + self.n_zero + self.log_theta as usize)
    }

    /// (first parameter index, width) of each active local slot.
    fn slots(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(LOG_MU, 0, self.n_count)];
        if self.n_zero > 0 {
            out.push((ZETA, self.n_count, self.n_zero));
        }
        if let Some(i) = self.theta_index() {
            out.push((LOG_THETA, i, 1));
        }
        if let Some(i) = self.pi_index() {
            out.push((LOGIT_PI, i, 1));
        }
        out
    }
}

/// A count-outcome log-likelihood over a fixed design.
#[derive(Debug, Clone)]
pub(crate) struct CountLikelihood {
    pub family: Family,
    pub heaping: Option<Heaping>,
    pub layout: ParamLayout,
    pub y: Vec<u64>,
    pub x_count: DMatrix<f64>,
    pub x_zero: Option<DMatrix<f64>>,
    pub weights: Option<Vec<f64>>,
}

/// Per-observation linear predictors.
struct Predictors {
    log_mu: DVector<f64>,
    zeta: Option<DVector<f64>>,
    log_theta: f64,
    heap: Option<HeapWeights>,
    logit_pi: f64,
}

impl CountLikelihood {
    pub fn new(
        family: Family,
        heaping: Option<Heaping>,
        y: Vec<u64>,
        x_count: DMatrix<f64>,
        x_zero: Option<DMatrix<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Self {
        let layout = ParamLayout {
            n_count: x_count.ncols(),
            n_zero: x_zero.as_ref().map_or(0, |x| x.ncols()),
            log_theta: family.has_dispersion(),
            logit_pi: matches!(heaping, Some(Heaping { pi: PiMode::Free, .. })),
        };
        Self {
            family,
            heaping,
            layout,
            y,
            x_count,
            x_zero,
            weights,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn predictors(&self, theta: &[f64]) -> Predictors {
        let l = &self.layout;
        let beta = DVector::from_column_slice(&theta[..l.n_count]);
        let log_mu = &self.x_count * beta;
        let zeta = self.x_zero.as_ref().map(|xz| {
            let gamma = DVector::from_column_slice(&theta[l.n_count..l.n_count + l.n_zero]);
            xz * gamma
        });
        let log_theta = l.theta_index().map_or(f64::NEG_INFINITY, |i| theta[i]);
        let (heap, logit_pi) = match self.heaping {
            None => (None, f64::NAN),
            Some(Heaping { eta, pi: PiMode::Fixed(p) }) => (Some(HeapWeights::from_pi(eta, p)), logit(p)),
            Some(Heaping { eta, pi: PiMode::Free }) => {
                let lp = theta[l.pi_index().expect("free pi has a slot")];
                (Some(HeapWeights::from_logit(eta, lp)), lp)
            }
        };
        Predictors {
            log_mu,
            zeta,
            log_theta,
            heap,
            logit_pi,
        }
    }

    fn local(p: &Predictors, i: usize) -> Local {
        Local {
            log_mu: p.log_mu[i],
            zeta: p.zeta.as_ref().map_or(f64::NEG_INFINITY, |z| z[i]),
            log_theta: p.log_theta,
        }
    }

    fn eval_local(&self, y: u64, loc: &Local, heap: Option<&HeapWeights>) -> (f64, [f64; N_LOCAL]) {
        match heap {
            None => kernel::log_pmf_grad(self.family, y, loc),
            Some(h) => kernel::heaped_log_mass_grad(self.family, y, loc, h),
        }
    }

    /// Unweighted log mass and local gradient of every observation.
    fn obs_terms(&self, theta: &[f64]) -> Vec<(f64, [f64; N_LOCAL])> {
        let p = self.predictors(theta);
        (0..self.n())
            .map(|i| self.eval_local(self.y[i], &Self::local(&p, i), p.heap.as_ref()))
            .collect()
    }

    /// Row of the first observation with zero mass, if any.
    pub fn zero_mass_row(&self, theta: &[f64]) -> Option<usize> {
        self.obs_terms(theta).iter().position(|(lm, _)| *lm == f64::NEG_INFINITY)
    }

    pub fn loglik(&self, theta: &[f64]) -> f64 {
        self.obs_terms(theta)
            .iter()
            .enumerate()
            .map(|(i, (lm, _))| self.weight(i) * lm)
            .sum()
    }

    /// Per-observation (unweighted) scores with respect to every parameter.
    pub fn obs_scores(&self, theta: &[f64]) -> DMatrix<f64> {
        let terms = self.obs_terms(theta);
        let mut out = DMatrix::zeros(self.n(), self.layout.dim());
        for (slot, start, width) in self.layout.slots() {
            for (i, (_, g)) in terms.iter().enumerate() {
                let gi = g[slot];
                match slot {
                    LOG_MU => {
                        for j in 0..width {
                            out[(i, start + j)] = gi * self.x_count[(i, j)];
                        }
                    }
                    ZETA => {
                        let xz = self.x_zero.as_ref().expect("zero-inflated design");
                        for j in 0..width {
                            out[(i, start + j)] = gi * xz[(i, j)];
                        }
                    }
                    _ => out[(i, start)] = gi,
                }
            }
        }
        out
    }

    pub fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let scores = self.obs_scores(theta);
        match &self.weights {
            None => scores.row_sum().transpose(),
            Some(w) => scores.tr_mul(&DVector::from_column_slice(w)),
        }
    }

    fn design_value(&self, slot: usize, i: usize, j: usize) -> f64 {
        match slot {
            LOG_MU => self.x_count[(i, j)],
            ZETA => self.x_zero.as_ref().expect("zero-inflated design")[(i, j)],
            _ => 1.0,
        }
    }

    /// Second derivatives in local coordinates, by central differences of
    /// the analytic local gradient (closed form for the plain Poisson).
    fn local_hessian(&self, y: u64, loc: &Local, logit_pi: f64, heap: Option<&HeapWeights>) -> [[f64; N_LOCAL]; N_LOCAL] {
        let mut h = [[0.0; N_LOCAL]; N_LOCAL];
        if self.family == Family::Poisson && heap.is_none() {
            h[LOG_MU][LOG_MU] = -loc.log_mu.exp();
            return h;
        }
        let step_base = f64::EPSILON.cbrt();
        let slots: Vec<usize> = self.layout.slots().iter().map(|s| s.0).collect();
        for &k in &slots {
            let value = match k {
                LOG_MU => loc.log_mu,
                ZETA => loc.zeta,
                LOG_THETA => loc.log_theta,
                _ => logit_pi,
            };
            let step = step_base * (1.0 + value.abs());
            let eval = |delta: f64| {
                let mut l = *loc;
                let mut hw = heap.copied();
                match k {
                    LOG_MU => l.log_mu += delta,
                    ZETA => l.zeta += delta,
                    LOG_THETA => l.log_theta += delta,
                    _ => hw = heap.map(|h| HeapWeights::from_logit(h.eta, logit_pi + delta)),
                }
                self.eval_local(y, &l, hw.as_ref()).1
            };
            let up = eval(step);
            let down = eval(-step);
            for &m in &slots {
                h[m][k] = (up[m] - down[m]) / (2.0 * step);
            }
        }
        for &a in &slots {
            for &b in &slots {
                if a < b {
                    let avg = 0.5 * (h[a][b] + h[b][a]);
                    h[a][b] = avg;
                    h[b][a] = avg;
                }
            }
        }
        h
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.predictors(theta);
        let slots = self.layout.slots();
        let dim = self.layout.dim();
        let mut out = DMatrix::zeros(dim, dim);
        for i in 0..self.n() {
            let loc = Self::local(&p, i);
            let hl = self.local_hessian(self.y[i], &loc, p.logit_pi, p.heap.as_ref());
            let w = self.weight(i);
            for &(s, s0, sw) in &slots {
                for &(t, t0, tw) in &slots {
                    let h = w * hl[s][t];
                    if h == 0.0 {
                        continue;
                    }
                    for j in 0..sw {
                        let xs = h * self.design_value(s, i, j);
                        for k in 0..tw {
                            out[(s0 + j, t0 + k)] += xs * self.design_value(t, i, k);
                        }
                    }
                }
            }
        }
        out
    }

    /// Fitted means `(1 − ν) μ` for alternative count/susceptibility designs.
    pub fn mean_predictions(&self, theta: &[f64], x_count: &DMatrix<f64>, x_zero: Option<&DMatrix<f64>>) -> Vec<f64> {
        let l = &self.layout;
        let beta = DVector::from_column_slice(&theta[..l.n_count]);
        let mu = x_count * beta;
        match x_zero {
            Some(xz) if l.n_zero > 0 => {
                let gamma = DVector::from_column_slice(&theta[l.n_count..l.n_count + l.n_zero]);
                let zeta = xz * gamma;
                mu.iter().zip(zeta.iter()).map(|(m, z)| (1.0 - logistic(*z)) * m.exp()).collect()
            }
            _ => mu.iter().map(|m| m.exp()).collect(),
        }
    }
}

impl Objective for CountLikelihood {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let v = self.loglik(x.as_slice());
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        CountLikelihood::gradient(self, x.as_slice())
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        CountLikelihood::hessian(self, x.as_slice())
    }
}

/// A fitted outcome model together with everything needed to predict from it.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub family: Family,
    pub design: DesignSpec,
    pub heaping: Option<Heaping>,
    pub fit: FitResult,
    pub(crate) layout: ParamLayout,
}

impl OutcomeFit {
    /// Fitted conditional mean of the true count for every row with the
    /// exposure set to `a`.
    pub fn predict_mean(&self, data: &Dataset, a: u8) -> Result<Vec<f64>> {
        let lik = self.likelihood(data, None)?;
        let (xc, xz) = self.counterfactual_designs(data, a)?;
        Ok(lik.mean_predictions(&self.fit.estimates, &xc, xz.as_ref()))
    }

    pub(crate) fn counterfactual_designs(&self, data: &Dataset, a: u8) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
        let xc = self.design.mean_matrix(data, ExposureSetting::Set(a))?;
        let xz = if self.family.is_zero_inflated() {
            Some(self.design.susceptibility_matrix(data, ExposureSetting::Set(a))?)
        } else {
            None
        };
        Ok((xc, xz))
    }

    pub(crate) fn likelihood(&self, data: &Dataset, weights: Option<Vec<f64>>) -> Result<CountLikelihood> {
        build_likelihood(data, self.family, &self.design, self.heaping, weights)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.fit
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| self.fit.estimates[i])
    }
}

fn build_likelihood(
    data: &Dataset,
    family: Family,
    design: &DesignSpec,
    heaping: Option<Heaping>,
    weights: Option<Vec<f64>>,
) -> Result<CountLikelihood> {
    let x_count = design.mean_matrix(data, ExposureSetting::Observed)?;
    let x_zero = if family.is_zero_inflated() {
        Some(design.susceptibility_matrix(data, ExposureSetting::Observed)?)
    } else {
        None
    };
    Ok(CountLikelihood::new(family, heaping, data.outcome().to_vec(), x_count, x_zero, weights))
}

fn parameter_names(data: &Dataset, family: Family, design: &DesignSpec, layout: &ParamLayout) -> Vec<String> {
    let mut names = design.mean_names(data);
    if family.is_zero_inflated() {
        names.extend(design.susceptibility_names().into_iter().map(|n| format!("zero:{n}")));
    }
    if layout.log_theta {
        names.push("log(theta)".into());
    }
    if layout.logit_pi {
        names.push("logit(pi)".into());
    }
    names
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(format!("weight on row {} must be positive and finite", i + 1)));
        }
    }
    Ok(())
}

/// An outcome-model log-likelihood evaluated at arbitrary parameters, on
/// the same scale as [`FitResult::estimates`].
#[derive(Debug, Clone)]
pub struct OutcomeLikelihood {
    inner: CountLikelihood,
    names: Vec<String>,
}

impl OutcomeLikelihood {
    pub fn new(
        data: &Dataset,
        family: Family,
        design: &DesignSpec,
        heaping: Option<Heaping>,
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        check_weights(weights, data.n())?;
        design.validate(data)?;
        let inner = build_likelihood(data, family, design, heaping, weights.map(<[f64]>::to_vec))?;
        let names = parameter_names(data, family, design, &inner.layout);
        Ok(Self { inner, names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension(format!("{} parameters for a model with {}", theta.len(), self.dim())))
        }
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        Ok(self.inner.loglik(theta))
    }

    /// Analytic gradient.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok(self.inner.gradient(theta).as_slice().to_vec())
    }

    /// Unweighted per-observation scores, one row per observation.
    pub fn scores(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        Ok(self.inner.obs_scores(theta))
    }
}

/// Maximum-likelihood fit of a count model, optionally weighted.
pub fn fit_count(data: &Dataset, family: Family, design: &DesignSpec, weights: Option<&[f64]>) -> Result<OutcomeFit> {
    fit_outcome(data, family, design, None, weights)
}

/// Maximum-likelihood fit of a count model to heaped reports with grid
/// width `eta`, jointly estimating the exact-report probability unless it
/// is fixed.
pub fn fit_heaped(
    data: &Dataset,
    family: Family,
    design: &DesignSpec,
    eta: u64,
    pi: PiMode,
    weights: Option<&[f64]>,
) -> Result<OutcomeFit> {
    if eta == 0 {
        return Err(Error::Domain("grid width must be at least 1".into()));
    }
    if let PiMode::Fixed(p) = pi {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("fixed exact-report probability {p} outside [0, 1]")));
        }
    }
    fit_outcome(data, family, design, Some(Heaping { eta, pi }), weights)
}

pub(crate) fn fit_outcome(
    data: &Dataset,
    family: Family,
    design: &DesignSpec,
    heaping: Option<Heaping>,
    weights: Option<&[f64]>,
) -> Result<OutcomeFit> {
    check_weights(weights, data.n())?;
    design.validate(data)?;
    let mut warnings = Vec::new();
    let heaping = match heaping {
        Some(Heaping { eta: 1, pi: PiMode::Free }) => {
            warnings.push("exact-report probability is not identified with grid width 1; held at 0.5".to_string());
            Some(Heaping { eta: 1, pi: PiMode::Fixed(0.5) })
        }
        other => other,
    };
    let lik = build_likelihood(data, family, design, heaping, weights.map(<[f64]>::to_vec))?;
    check_full_rank(&lik.x_count, &design.mean_names(data))?;
    if let Some(xz) = &lik.x_zero {
        check_full_rank(xz, &design.susceptibility_names())?;
    }
    let start = starting_values(data, family, design, heaping, weights, &lik)?;
    if let Some(row) = lik.zero_mass_row(start.as_slice()) {
        return Err(Error::ZeroMass { row });
    }

    let opt = optim::maximize(&lik, start, &Options::default());
    let layout = lik.layout.clone();
    let names = parameter_names(data, family, design, &layout);
    let dispersion = layout.theta_index().map(|i| opt.x[i].exp());
    let pi = match heaping {
        None => None,
        Some(Heaping { pi: PiMode::Fixed(p), .. }) => Some(p),
        Some(Heaping { pi: PiMode::Free, .. }) => layout.pi_index().map(|i| logistic(opt.x[i])),
    };
    if let Some(i) = layout.pi_index() {
        if opt.x[i].abs() > PI_BOUNDARY_LOGIT {
            warnings.push(format!("exact-report probability estimate {:.6} is on the boundary", logistic(opt.x[i])));
        }
    }
    let mut fit = FitResult::from_optimum(opt, names, dispersion, pi);
    fit.warnings.extend(warnings);
    Ok(OutcomeFit {
        family,
        design: design.clone(),
        heaping,
        fit,
        layout,
    })
}

fn weighted_mean(y: &[u64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64,
        Some(w) => {
            let total: f64 = w.iter().sum();
            y.iter().zip(w).map(|(&v, w)| v as f64 * w).sum::<f64>() / total
        }
    }
}

fn starting_values(
    data: &Dataset,
    family: Family,
    design: &DesignSpec,
    heaping: Option<Heaping>,
    weights: Option<&[f64]>,
    lik: &CountLikelihood,
) -> Result<DVector<f64>> {
    let layout = &lik.layout;
    let mut start = DVector::zeros(layout.dim());

    if heaping.is_some() {
        let naive = fit_outcome(data, family, design, None, weights)?;
        start
            .rows_mut(0, naive.fit.estimates.len())
            .copy_from_slice(&naive.fit.estimates);
        if let Some(i) = layout.pi_index() {
            start[i] = 0.0;
        }
        return Ok(start);
    }

    let y = data.outcome();
    match family {
        Family::Poisson => {
            start[0] = (weighted_mean(y, weights) + 0.5).ln();
        }
        Family::NegBin => {
            let poisson = fit_outcome(data, Family::Poisson, design, None, weights)?;
            start.rows_mut(0, layout.n_count).copy_from_slice(&poisson.fit.estimates);
            let mu = poisson.predict_mean(data, 0).ok().map(|_| {
                let lik_p = poisson.likelihood(data, None).expect("design already validated");
                lik_p.mean_predictions(&poisson.fit.estimates, &lik_p.x_count, None)
            });
            let mu = mu.unwrap_or_else(|| vec![weighted_mean(y, weights); y.len()]);
            let (num, den) = y.iter().zip(&mu).fold((0.0, 0.0), |(n, d), (&yi, &m)| {
                let r = yi as f64 - m;
                (n + r * r - m, d + m * m)
            });
            let theta0 = (num / den).max(0.05);
            start[layout.theta_index().expect("negbin has dispersion")] = theta0.ln();
        }
        Family::Zip | Family::Zinb => {
            let base_family = if family == Family::Zip { Family::Poisson } else { Family::NegBin };
            let base = fit_outcome(data, base_family, design, None, weights)?;
            start.rows_mut(0, layout.n_count).copy_from_slice(&base.fit.estimates[..layout.n_count]);
            if let (Some(i), Some(j)) = (layout.theta_index(), base.layout.theta_index()) {
                start[i] = base.fit.estimates[j];
            }
            let base_lik = base.likelihood(data, None)?;
            let p = base_lik.predictors(&base.fit.estimates);
            let expected_zero: f64 = (0..y.len())
                .map(|i| kernel::log_pmf_grad(base_family, 0, &CountLikelihood::local(&p, i)).0.exp())
                .sum::<f64>()
                / y.len() as f64;
            let observed_zero = y.iter().filter(|&&v| v == 0).count() as f64 / y.len() as f64;
            let excess = ((observed_zero - expected_zero) / (1.0 - expected_zero)).clamp(0.01, 0.99);
            start[layout.n_count] = logit(excess);
        }
    }
    Ok(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pmf, CountParams};
    use approx::assert_relative_eq;

    fn intercept_only() -> DesignSpec {
        DesignSpec::new::<&str>(&[])
    }

    #[test]
    fn poisson_intercept_is_log_mean() {
        let data = Dataset::new(vec![0, 1, 0, 1], vec![0, 1, 2, 3]).unwrap();
        let fit = fit_count(&data, Family::Poisson, &intercept_only(), None).unwrap();
        assert!(fit.fit.converged);
        assert_relative_eq!(fit.fit.estimates[0].exp(), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn saturated_poisson_exposure_coefficient() {
        // Group means 2 (A = 0) and 3 (A = 1).
        let data = Dataset::new(vec![0, 0, 0, 1, 1, 1], vec![1, 2, 3, 2, 3, 4]).unwrap();
        let fit = fit_count(&data, Family::Poisson, &intercept_only().with_exposure(), None).unwrap();
        assert_relative_eq!(fit.fit.estimates[0], 2.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(fit.fit.estimates[1], 1.5f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(fit.coefficient("A").unwrap(), 1.5f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn unit_weights_match_unweighted_fit() {
        let y = vec![0, 0, 1, 5, 2, 0, 3, 7, 1, 0, 0, 4];
        let a = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let data = Dataset::new(a, y).unwrap().with_column("x", x).unwrap();
        let design = DesignSpec::new(&["x"]).with_exposure().with_susceptibility(&["x"]);
        for family in Family::ALL {
            let plain = fit_count(&data, family, &design, None).unwrap();
            let weighted = fit_count(&data, family, &design, Some(&[1.0; 12])).unwrap();
            assert!((plain.fit.loglik - weighted.fit.loglik).abs() < 1e-8, "{family}");
            // Zero-inflated fits on so few rows drift along flat directions.
            if !family.is_zero_inflated() {
                for (p, w) in plain.fit.estimates.iter().zip(&weighted.fit.estimates) {
                    assert!((p - w).abs() < 1e-8, "{family}: {p} vs {w}");
                }
            }
        }
    }

    #[test]
    fn zip_intercept_only_matches_grid_search() {
        // 50 observations: 22 zeros, the rest a Poisson-ish spread.
        let mut y = vec![0u64; 22];
        y.extend([1, 1, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 5, 5, 6, 1, 2, 3, 4, 2, 3, 5, 7, 2, 3, 1, 4, 3]);
        let n = y.len();
        assert_eq!(n, 50);
        let data = Dataset::new(vec![0; n], y.clone()).unwrap();
        let fit = fit_count(&data, Family::Zip, &intercept_only().with_susceptibility::<&str>(&[]), None).unwrap();
        assert!(fit.fit.converged);
        let mu_hat = fit.fit.estimates[0].exp();
        let nu_hat = logistic(fit.fit.estimates[1]);

        let loglik = |nu: f64, mu: f64| -> f64 {
            let params = CountParams::new(mu, nu, 0.0).unwrap();
            y.iter().map(|&v| pmf(Family::Zip, &params, v).unwrap().ln()).sum()
        };
        // Coarse grid then two refinements around the best point.
        let (mut best_nu, mut best_mu) = (0.5, 2.0);
        let mut half_width = (0.49, 1.9);
        for _ in 0..6 {
            let mut best = f64::NEG_INFINITY;
            let (c_nu, c_mu) = (best_nu, best_mu);
            for a in 0..=40 {
                for b in 0..=40 {
                    let nu = c_nu - half_width.0 + 2.0 * half_width.0 * a as f64 / 40.0;
                    let mu = c_mu - half_width.1 + 2.0 * half_width.1 * b as f64 / 40.0;
                    if !(0.0..1.0).contains(&nu) || mu <= 0.0 {
                        continue;
                    }
                    let v = loglik(nu, mu);
                    if v > best {
                        best = v;
                        best_nu = nu;
                        best_mu = mu;
                    }
                }
            }
            half_width = (half_width.0 / 8.0, half_width.1 / 8.0);
        }
        assert!((nu_hat - best_nu).abs() < 1e-3, "nu {nu_hat} vs grid {best_nu}");
        assert!((mu_hat - best_mu).abs() < 1e-3, "mu {mu_hat} vs grid {best_mu}");
    }

    #[test]
    fn heaped_with_exact_reports_equals_plain_fit() {
        let y = vec![0, 3, 10, 20, 5, 10, 0, 1, 30, 10, 4, 12];
        let a = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let data = Dataset::new(a, y).unwrap();
        let design = intercept_only().with_exposure();
        for family in [Family::Poisson, Family::NegBin] {
            let plain = fit_count(&data, family, &design, None).unwrap();
            let exact = fit_heaped(&data, family, &design, 10, PiMode::Fixed(1.0), None).unwrap();
            let unit_grid = fit_heaped(&data, family, &design, 1, PiMode::Free, None).unwrap();
            assert!(unit_grid.fit.warnings.iter().any(|w| w.contains("not identified")));
            for ((p, e), u) in plain.fit.estimates.iter().zip(&exact.fit.estimates).zip(&unit_grid.fit.estimates) {
                assert!((p - e).abs() <= 1e-6 * p.abs().max(1e-3), "{family}: {p} vs {e}");
                assert!((p - u).abs() <= 1e-6 * p.abs().max(1e-3), "{family}: {p} vs {u}");
            }
        }
    }

    #[test]
    fn off_grid_report_with_no_exact_reports_is_zero_mass() {
        let data = Dataset::new(vec![0, 1, 0], vec![10, 7, 20]).unwrap();
        let err = fit_heaped(&data, Family::Poisson, &intercept_only(), 10, PiMode::Fixed(0.0), None).unwrap_err();
        assert_eq!(err, Error::ZeroMass { row: 1 });
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let y = vec![0, 0, 1, 5, 2, 0, 3, 7, 1, 0, 10, 4, 20, 0];
        let a = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0];
        let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.61).cos()).collect();
        let w: Vec<f64> = (0..14).map(|i| 1.0 + (i % 3) as f64).collect();
        let data = Dataset::new(a, y).unwrap().with_column("x", x).unwrap();
        let design = DesignSpec::new(&["x"]).with_exposure().with_susceptibility(&["x"]);
        for family in Family::ALL {
            for heaping in [None, Some(Heaping { eta: 10, pi: PiMode::Free })] {
                let lik = build_likelihood(&data, family, &design, heaping, Some(w.clone())).unwrap();
                let theta: Vec<f64> = (0..lik.layout.dim()).map(|j| 0.3 - 0.2 * j as f64).collect();
                let g = lik.gradient(&theta);
                let h = lik.hessian(&theta);
                for j in 0..theta.len() {
                    let step = 1e-5;
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[j] += step;
                    dn[j] -= step;
                    let fd = (lik.loglik(&up) - lik.loglik(&dn)) / (2.0 * step);
                    assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "{family} {heaping:?} grad {j}");
                    let gd = (lik.gradient(&up) - lik.gradient(&dn)) / (2.0 * step);
                    for k in 0..theta.len() {
                        assert!((gd[k] - h[(k, j)]).abs() < 1e-4 * (1.0 + gd[k].abs()), "{family} {heaping:?} hess {k},{j}");
                    }
                }
            }
        }
    }
}
