//! Estimators of the causal mean ratio: inverse probability weighting, the
//! parametric g-formula, doubly robust, and their heaped-report variants.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DesignSpec, ExposureSetting};
use crate::error::{Error, Result};
use crate::inference::{build_stack, sandwich, wald_ci, StackSpec};
use crate::mle::{fit_heaped, fit_logistic, FitResult, OutcomeFit, PiMode};
use crate::model::kernel::logistic;
use crate::model::Family;

/// Name of the signed-weight covariate added to the heaped DR outcome model.
pub const R_HAT: &str = "r_hat";

/// Propensities closer than this to 0 or 1 draw a warning.
const EXTREME_PROPENSITY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IPTW")]
    Iptw,
    #[serde(rename = "PG")]
    Pg,
    #[serde(rename = "DR")]
    Dr,
    #[serde(rename = "IPTW_heap")]
    IptwHeap,
    #[serde(rename = "PG_heap")]
    PgHeap,
    #[serde(rename = "DR_heap")]
    DrHeap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Iptw,
        Method::Pg,
        Method::Dr,
        Method::IptwHeap,
        Method::PgHeap,
        Method::DrHeap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iptw => "IPTW",
            Method::Pg => "PG",
            Method::Dr => "DR",
            Method::IptwHeap => "IPTW_heap",
            Method::PgHeap => "PG_heap",
            Method::DrHeap => "DR_heap",
        }
    }

    pub fn is_heaped(self) -> bool {
        matches!(self, Method::IptwHeap | Method::PgHeap | Method::DrHeap)
    }

    pub fn uses_weights(self) -> bool {
        !matches!(self, Method::Pg | Method::PgHeap)
    }

    pub fn uses_outcome_model(self) -> bool {
        !matches!(self, Method::Iptw | Method::IptwHeap)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Domain(format!("unknown method `{s}`")))
    }
}

/// Whether the propensity model is treated as known or estimated when
/// computing standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightTreatment {
    #[serde(rename = "fixed")]
    Fixed,
    #[serde(rename = "estimated")]
    Estimated,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl WeightTreatment {
    pub fn name(self) -> &'static str {
        match self {
            WeightTreatment::Fixed => "fixed",
            WeightTreatment::Estimated => "estimated",
            WeightTreatment::NotApplicable => "n/a",
        }
    }
}

impl fmt::Display for WeightTreatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightTreatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(WeightTreatment::Fixed),
            "estimated" => Ok(WeightTreatment::Estimated),
            "n/a" | "na" => Ok(WeightTreatment::NotApplicable),
            _ => Err(Error::Domain(format!("unknown weight treatment `{s}`"))),
        }
    }
}

/// Fitted propensity scores and the weights derived from them.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Logistic fit; `None` when the propensities were supplied directly.
    pub fit: Option<FitResult>,
    pub design: DesignSpec,
    pub e: Vec<f64>,
    pub weights: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub warnings: Vec<String>,
    pub(crate) x: Option<DMatrix<f64>>,
    pub(crate) bounds: Option<(f64, f64)>,
}

impl PropensityFit {
    /// Logistic regression of the exposure on `design`.
    pub fn fit(data: &Dataset, design: &DesignSpec) -> Result<Self> {
        let fit = fit_logistic(data, design)?;
        fit.require_converged()?;
        let x = design.mean_matrix(data, ExposureSetting::Observed)?;
        let e = propensities(&x, &fit.estimates, None);
        let mut out = Self::from_parts(data, Some(fit), design.clone(), Some(x), e, None)?;
        let fit_warnings = out.fit.as_ref().map(|f| f.warnings.clone()).unwrap_or_default();
        out.warnings.extend(fit_warnings);
        Ok(out)
    }

    /// Propensities treated as known.
    pub fn known(data: &Dataset, e: Vec<f64>) -> Result<Self> {
        if e.len() != data.n() {
            return Err(Error::Dimension(format!("{} propensities for {} rows", e.len(), data.n())));
        }
        Self::from_parts(data, None, DesignSpec::default(), None, e, None)
    }

    fn from_parts(
        data: &Dataset,
        fit: Option<FitResult>,
        design: DesignSpec,
        x: Option<DMatrix<f64>>,
        e: Vec<f64>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if let Some(i) = e.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Estimation(format!(
                "propensity on row {} is {}; weights are undefined",
                i + 1,
                e[i]
            )));
        }
        let mut warnings = Vec::new();
        let extreme = e
            .iter()
            .filter(|&&p| !(EXTREME_PROPENSITY..=1.0 - EXTREME_PROPENSITY).contains(&p))
            .count();
        if extreme > 0 {
            warnings.push(format!("{extreme} propensities within {EXTREME_PROPENSITY:e} of 0 or 1"));
        }
        let (weights, r_hat) = weights_and_signed(data.exposure(), &e);
        Ok(Self {
            fit,
            design,
            e,
            weights,
            r_hat,
            warnings,
            x,
            bounds,
        })
    }

    /// Clips propensities to their `pct` and `100 − pct` percentiles.
    pub fn truncated(self, data: &Dataset, pct: f64) -> Result<Self> {
        if !(pct > 0.0 && pct < 50.0) {
            return Err(Error::Domain(format!("truncation percentile {pct} outside (0, 50)")));
        }
        let mut sorted = self.e.clone();
        sorted.sort_by(f64::total_cmp);
        let bounds = (quantile(&sorted, pct / 100.0), quantile(&sorted, 1.0 - pct / 100.0));
        let e = self.e.iter().map(|p| p.clamp(bounds.0, bounds.1)).collect();
        let mut out = Self::from_parts(data, self.fit, self.design, self.x, e, Some(bounds))?;
        out.warnings.push(format!(
            "propensities truncated to [{:.6}, {:.6}]",
            bounds.0, bounds.1
        ));
        Ok(out)
    }

    pub fn alpha(&self) -> Option<&[f64]> {
        self.fit.as_ref().map(|f| f.estimates.as_slice())
    }

    /// Propensities at coefficients `alpha` with the same truncation bounds.
    pub(crate) fn propensities_at(&self, alpha: &[f64]) -> Vec<f64> {
        let x = self.x.as_ref().expect("propensities at alpha need a fitted model");
        propensities(x, alpha, self.bounds)
    }
}

fn propensities(x: &DMatrix<f64>, alpha: &[f64], bounds: Option<(f64, f64)>) -> Vec<f64> {
    let eta = x * DVector::from_column_slice(alpha);
    eta.iter()
        .map(|&v| {
            let p = logistic(v);
            match bounds {
                Some((lo, hi)) => p.clamp(lo, hi),
                None => p,
            }
        })
        .collect()
}

/// `W = A/e + (1−A)/(1−e)` and the signed weight `r̂ = A·W − (1−A)·W`.
pub(crate) fn weights_and_signed(a: &[u8], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(e)
        .map(|(&a, &p)| {
            if a == 1 {
                (1.0 / p, 1.0 / p)
            } else {
                let w = 1.0 / (1.0 - p);
                (w, -w)
            }
        })
        .unzip()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A point estimate of the causal mean ratio with its standard error and
/// Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmrEstimate {
    pub lambda1: f64,
    pub lambda0: f64,
    pub cmr: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    pub weight_treatment: WeightTreatment,
    pub warnings: Vec<String>,
}

impl CmrEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

struct Pending<'a> {
    method: Method,
    treatment: WeightTreatment,
    lambda1: f64,
    lambda0: f64,
    cmr: f64,
    spec: StackSpec<'a>,
    warnings: Vec<String>,
}

fn finish(p: Pending<'_>, level: f64) -> Result<CmrEstimate> {
    if !(p.cmr.is_finite() && p.cmr > 0.0) {
        return Err(Error::Estimation(format!("{} ratio is not positive and finite: {}", p.method, p.cmr)));
    }
    let stack = build_stack(p.spec)?;
    let se = sandwich(&stack)?.se_cmr;
    let (ci_low, ci_high) = wald_ci(p.cmr, se, level)?;
    Ok(CmrEstimate {
        lambda1: p.lambda1,
        lambda0: p.lambda0,
        cmr: p.cmr,
        se,
        ci_low,
        ci_high,
        method: p.method,
        weight_treatment: p.treatment,
        warnings: p.warnings,
    })
}

fn check_arms(data: &Dataset) -> Result<()> {
    let treated = data.exposure().iter().filter(|&&a| a == 1).count();
    if treated == 0 || treated == data.n() {
        return Err(Error::Estimation("both exposure groups must be non-empty".into()));
    }
    Ok(())
}

fn check_prop(data: &Dataset, prop: &PropensityFit, treatment: WeightTreatment) -> Result<()> {
    if prop.e.len() != data.n() {
        return Err(Error::Dimension(format!(
            "{} propensities for {} rows",
            prop.e.len(),
            data.n()
        )));
    }
    match treatment {
        WeightTreatment::Estimated if prop.fit.is_none() => Err(Error::Estimation(
            "estimated-weight variance needs a fitted propensity model".into(),
        )),
        WeightTreatment::NotApplicable => Err(Error::Estimation(
            "weighting estimators need a fixed or estimated weight treatment".into(),
        )),
        _ => Ok(()),
    }
}

/// Weighted arm means `(λ¹, λ⁰)` in ratio-normalized form.
fn hajek_means(data: &Dataset, weights: &[f64]) -> (f64, f64) {
    let mut sums = [0.0; 4];
    for ((&a, &y), &w) in data.exposure().iter().zip(data.outcome()).zip(weights) {
        let k = if a == 1 { 0 } else { 2 };
        sums[k] += w * y as f64;
        sums[k + 1] += w;
    }
    (sums[0] / sums[1], sums[2] / sums[3])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Inverse probability of treatment weighted estimator with Hájek-normalized
/// arm means.
pub fn cmr_iptw(data: &Dataset, prop: &PropensityFit, treatment: WeightTreatment, level: f64) -> Result<CmrEstimate> {
    check_arms(data)?;
    check_prop(data, prop, treatment)?;
    let (lambda1, lambda0) = hajek_means(data, &prop.weights);
    finish(
        Pending {
            method: Method::Iptw,
            treatment,
            lambda1,
            lambda0,
            cmr: lambda1 / lambda0,
            spec: StackSpec::Iptw {
                data,
                prop,
                treatment,
                lambda: (lambda1, lambda0),
            },
            warnings: prop.warnings.clone(),
        },
        level,
    )
}

/// Parametric g-formula: average fitted conditional means with the exposure
/// set to each level. A heaped outcome fit gives the heaped variant.
pub fn cmr_pg(data: &Dataset, outcome: &OutcomeFit, level: f64) -> Result<CmrEstimate> {
    outcome.fit.require_converged()?;
    let lambda1 = mean(&outcome.predict_mean(data, 1)?);
    let lambda0 = mean(&outcome.predict_mean(data, 0)?);
    finish(
        Pending {
            method: if outcome.heaping.is_some() { Method::PgHeap } else { Method::Pg },
            treatment: WeightTreatment::NotApplicable,
            lambda1,
            lambda0,
            cmr: lambda1 / lambda0,
            spec: StackSpec::Pg {
                data,
                outcome,
                lambda: (lambda1, lambda0),
            },
            warnings: outcome.fit.warnings.clone(),
        },
        level,
    )
}

/// Doubly robust estimator combining the propensity and outcome models.
/// Standard errors account for propensity estimation when a fitted model
/// is available.
pub fn cmr_dr(data: &Dataset, prop: &PropensityFit, outcome: &OutcomeFit, level: f64) -> Result<CmrEstimate> {
    check_arms(data)?;
    let treatment = if prop.fit.is_some() {
        WeightTreatment::Estimated
    } else {
        WeightTreatment::Fixed
    };
    check_prop(data, prop, treatment)?;
    outcome.fit.require_converged()?;
    let m1 = outcome.predict_mean(data, 1)?;
    let m0 = outcome.predict_mean(data, 0)?;
    let (lambda1, lambda0) = dr_means(data.exposure(), data.outcome(), &prop.e, &m1, &m0);
    let mut warnings = prop.warnings.clone();
    warnings.extend(outcome.fit.warnings.iter().cloned());
    finish(
        Pending {
            method: Method::Dr,
            treatment,
            lambda1,
            lambda0,
            cmr: lambda1 / lambda0,
            spec: StackSpec::Dr {
                data,
                prop,
                outcome,
                lambda: (lambda1, lambda0),
            },
            warnings,
        },
        level,
    )
}

/// Augmented inverse-weighted means.
pub(crate) fn dr_means(a: &[u8], y: &[u64], e: &[f64], m1: &[f64], m0: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let mut s1 = 0.0;
    let mut s0 = 0.0;
    for i in 0..a.len() {
        let ai = a[i] as f64;
        let yi = y[i] as f64;
        s1 += (ai * yi - (ai - e[i]) * m1[i]) / e[i];
        s0 += ((1.0 - ai) * yi + (ai - e[i]) * m0[i]) / (1.0 - e[i]);
    }
    (s1 / n, s0 / n)
}

/// Weighted marginal model for heaped reports, `log λᵃ = δ₀ + δ₁a`, fitted
/// jointly with the exact-report probability; the ratio is `exp(δ₁)`.
pub fn cmr_iptw_heap(
    data: &Dataset,
    prop: &PropensityFit,
    family: Family,
    eta: u64,
    treatment: WeightTreatment,
    level: f64,
) -> Result<CmrEstimate> {
    check_arms(data)?;
    check_prop(data, prop, treatment)?;
    let outcome = fit_iptw_heap_marginal(data, prop, family, eta)?;
    cmr_iptw_heap_from_fit(data, prop, &outcome, treatment, level)
}

/// Weighted heaped fit of the marginal model `log λᵃ = δ₀ + δ₁a`.
pub fn fit_iptw_heap_marginal(data: &Dataset, prop: &PropensityFit, family: Family, eta: u64) -> Result<OutcomeFit> {
    let design = DesignSpec::new::<&str>(&[]).with_exposure();
    fit_heaped(data, family, &design, eta, PiMode::Free, Some(&prop.weights))
}

/// Heaped IPTW from an already fitted weighted marginal model.
pub fn cmr_iptw_heap_from_fit(
    data: &Dataset,
    prop: &PropensityFit,
    outcome: &OutcomeFit,
    treatment: WeightTreatment,
    level: f64,
) -> Result<CmrEstimate> {
    check_arms(data)?;
    check_prop(data, prop, treatment)?;
    outcome.fit.require_converged()?;
    let (d0, d1) = (outcome.fit.estimates[0], outcome.fit.estimates[1]);
    let mut warnings = prop.warnings.clone();
    warnings.extend(outcome.fit.warnings.iter().cloned());
    finish(
        Pending {
            method: Method::IptwHeap,
            treatment,
            lambda1: (d0 + d1).exp(),
            lambda0: d0.exp(),
            cmr: d1.exp(),
            spec: StackSpec::IptwHeap {
                data,
                prop,
                outcome,
                treatment,
            },
            warnings,
        },
        level,
    )
}

/// g-formula on an outcome model fitted to heaped reports.
pub fn cmr_pg_heap(data: &Dataset, family: Family, design: &DesignSpec, eta: u64, level: f64) -> Result<CmrEstimate> {
    let outcome = fit_heaped(data, family, design, eta, PiMode::Free, None)?;
    cmr_pg(data, &outcome, level)
}

/// Signed-weight value used when predicting with the exposure set to `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhatPrediction {
    /// `a/ê − (1−a)/(1−ê)`: the signed weight the subject would carry under
    /// exposure `a`.
    #[default]
    Counterfactual,
    /// The subject's observed `r̂`, whatever the exposure is set to.
    Observed,
}

impl FromStr for RhatPrediction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "counterfactual" => Ok(RhatPrediction::Counterfactual),
            "observed" => Ok(RhatPrediction::Observed),
            _ => Err(Error::Domain(format!("unknown signed-weight prediction mode `{s}`"))),
        }
    }
}

/// Signed-weight columns for predictions at `a = 1` and `a = 0`.
pub(crate) fn prediction_rhat(e: &[f64], r_obs: &[f64], mode: RhatPrediction) -> (Vec<f64>, Vec<f64>) {
    match mode {
        RhatPrediction::Observed => (r_obs.to_vec(), r_obs.to_vec()),
        RhatPrediction::Counterfactual => (
            e.iter().map(|p| 1.0 / p).collect(),
            e.iter().map(|p| -1.0 / (1.0 - p)).collect(),
        ),
    }
}

/// Position of the `r̂` column in the outcome model's count design.
pub(crate) fn rhat_column(outcome: &OutcomeFit, data: &Dataset) -> Result<usize> {
    outcome
        .design
        .mean_names(data)
        .iter()
        .position(|n| n == R_HAT)
        .ok_or_else(|| Error::Dimension(format!("outcome design lacks `{R_HAT}`")))
}

/// Doubly robust estimator for heaped reports: the heaped outcome model
/// carries the signed weight `r̂` as a count-part covariate, and the ratio
/// averages its predictions with the exposure set to each level.
pub fn cmr_dr_heap(
    data: &Dataset,
    prop: &PropensityFit,
    family: Family,
    design: &DesignSpec,
    eta: u64,
    mode: RhatPrediction,
    level: f64,
) -> Result<CmrEstimate> {
    let outcome = fit_dr_heap_outcome(data, prop, family, design, eta)?;
    cmr_dr_heap_from_fit(data, prop, &outcome, mode, level)
}

/// Heaped DR from an outcome model fitted by [`fit_dr_heap_outcome`].
pub fn cmr_dr_heap_from_fit(
    data: &Dataset,
    prop: &PropensityFit,
    outcome: &OutcomeFit,
    mode: RhatPrediction,
    level: f64,
) -> Result<CmrEstimate> {
    check_arms(data)?;
    let treatment = if prop.fit.is_some() {
        WeightTreatment::Estimated
    } else {
        WeightTreatment::Fixed
    };
    check_prop(data, prop, treatment)?;
    outcome.fit.require_converged()?;
    let col = rhat_column(outcome, data)?;
    let (r1, r0) = prediction_rhat(&prop.e, &prop.r_hat, mode);
    let lik = outcome.likelihood(data, None)?;
    let mut means = [0.0; 2];
    for (k, (a, r)) in [(1u8, &r1), (0u8, &r0)].into_iter().enumerate() {
        let (mut xc, xz) = outcome.counterfactual_designs(data, a)?;
        xc.column_mut(col).copy_from_slice(r);
        means[k] = mean(&lik.mean_predictions(&outcome.fit.estimates, &xc, xz.as_ref()));
    }
    let [lambda1, lambda0] = means;
    let mut warnings = prop.warnings.clone();
    warnings.extend(outcome.fit.warnings.iter().cloned());
    finish(
        Pending {
            method: Method::DrHeap,
            treatment,
            lambda1,
            lambda0,
            cmr: lambda1 / lambda0,
            spec: StackSpec::DrHeap {
                data,
                prop,
                outcome,
                mode,
                lambda: (lambda1, lambda0),
            },
            warnings,
        },
        level,
    )
}

/// Heaped outcome fit with `r̂` appended to the count-part covariates.
pub fn fit_dr_heap_outcome(
    data: &Dataset,
    prop: &PropensityFit,
    family: Family,
    design: &DesignSpec,
    eta: u64,
) -> Result<OutcomeFit> {
    if data.column(R_HAT).is_ok() {
        return Err(Error::Data(format!("column name `{R_HAT}` is reserved")));
    }
    let augmented = design.clone().with_extra_mean_column(R_HAT, prop.r_hat.clone());
    fit_heaped(data, family, &augmented, eta, PiMode::Free, None)
}
