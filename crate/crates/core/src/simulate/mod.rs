//! Monte Carlo studies of the estimators: data-generating designs,
//! misspecification regimes, the replication loop and summary metrics.

mod dgp;

pub use dgp::{
    gen_heaping, gen_heaping_with, gen_partners, SimData, HEAPING_LOG_CMR, HEAPING_SPEC, PARTNERS_LOG_CMR,
    PARTNERS_THETA,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DesignSpec;
use crate::error::{Error, Result};
use crate::estimators::{
    cmr_dr, cmr_dr_heap_from_fit, cmr_iptw, cmr_iptw_heap_from_fit, cmr_pg, fit_dr_heap_outcome,
    fit_iptw_heap_marginal, CmrEstimate, Method, PropensityFit, RhatPrediction, WeightTreatment,
};
use crate::mle::{fit_count, fit_heaped, PiMode};
use crate::model::Family;

/// Which data-generating process a scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Partners,
    Heaping,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Partners => "partners",
            Design::Heaping => "heaping",
        }
    }

    /// True causal mean ratio.
    pub fn true_cmr(self) -> f64 {
        match self {
            Design::Partners => PARTNERS_LOG_CMR.exp(),
            Design::Heaping => HEAPING_LOG_CMR.exp(),
        }
    }

    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Design::Partners => vec![Method::Iptw, Method::Pg, Method::Dr],
            Design::Heaping => Method::ALL.to_vec(),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "partners" => Ok(Design::Partners),
            "heaping" => Ok(Design::Heaping),
            _ => Err(Error::Domain(format!("unknown design `{s}`"))),
        }
    }
}

/// Misspecification regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Misspec {
    #[serde(rename = "none")]
    None,
    /// Weight model misspecified.
    #[serde(rename = "MW")]
    Mw,
    /// Outcome model misspecified.
    #[serde(rename = "MO")]
    Mo,
    /// Both misspecified.
    #[serde(rename = "MB")]
    Mb,
}

impl Misspec {
    pub const ALL: [Misspec; 4] = [Misspec::None, Misspec::Mw, Misspec::Mo, Misspec::Mb];

    pub fn name(self) -> &'static str {
        match self {
            Misspec::None => "none",
            Misspec::Mw => "MW",
            Misspec::Mo => "MO",
            Misspec::Mb => "MB",
        }
    }

    fn affects(self, role: Role) -> bool {
        match role {
            Role::Weight => matches!(self, Misspec::Mw | Misspec::Mb),
            Role::Outcome => matches!(self, Misspec::Mo | Misspec::Mb),
        }
    }

    /// Whether a method is reported under this regime: every method when
    /// nothing is misspecified, otherwise only methods relying on every
    /// misspecified model.
    pub fn reports(self, method: Method) -> bool {
        (!self.affects(Role::Weight) || method.uses_weights())
            && (!self.affects(Role::Outcome) || method.uses_outcome_model())
    }
}

impl fmt::Display for Misspec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Misspec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Misspec::None),
            "mw" => Ok(Misspec::Mw),
            "mo" => Ok(Misspec::Mo),
            "mb" => Ok(Misspec::Mb),
            _ => Err(Error::Domain(format!("unknown misspecification `{s}`"))),
        }
    }
}

/// Model whose covariates a misspecification changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Outcome,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weight" => Ok(Role::Weight),
            "outcome" => Ok(Role::Outcome),
            _ => Err(Error::Domain(format!("unknown model role `{s}`"))),
        }
    }
}

/// Covariate design of the weight or outcome model under a regime.
///
/// Partners: the weight and outcome models use L1, L2, L3 (the outcome adds
/// the exposure, and zero-inflated families use L1, L2, L3 for the
/// susceptibility part); misspecification drops L2 from the affected model.
/// Heaping: the models use L4, and misspecification substitutes L5.
pub fn apply_misspec(design: Design, family: Family, misspec: Misspec, role: Role) -> DesignSpec {
    let wrong = misspec.affects(role);
    let covariates: Vec<&str> = match (design, wrong) {
        (Design::Partners, false) => vec!["L1", "L2", "L3"],
        (Design::Partners, true) => vec!["L1", "L3"],
        (Design::Heaping, false) => vec!["L4"],
        (Design::Heaping, true) => vec!["L5"],
    };
    let spec = DesignSpec::new(&covariates);
    match role {
        Role::Weight => spec,
        Role::Outcome => {
            let spec = spec.with_exposure();
            if family.is_zero_inflated() {
                spec.with_susceptibility(&covariates)
            } else {
                spec
            }
        }
    }
}

/// A simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub design: Design,
    /// Outcome family (partners design; the heaping design is Poisson).
    pub family: Family,
    pub n: usize,
    pub reps: usize,
    pub misspec: Misspec,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub level: f64,
}

impl SimScenario {
    pub fn partners(family: Family, misspec: Misspec, n: usize, reps: usize, base_seed: u64) -> Self {
        Self {
            design: Design::Partners,
            family,
            n,
            reps,
            misspec,
            base_seed,
            methods: Design::Partners.default_methods(),
            level: 0.95,
        }
    }

    pub fn heaping(misspec: Misspec, n: usize, reps: usize, base_seed: u64) -> Self {
        Self {
            design: Design::Heaping,
            family: Family::Poisson,
            n,
            reps,
            misspec,
            base_seed,
            methods: Design::Heaping.default_methods(),
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.reps == 0 {
            return Err(Error::Domain("sample size and replication count must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Domain(format!("confidence level {} outside (0, 1)", self.level)));
        }
        if self.design == Design::Partners {
            if let Some(m) = self.methods.iter().find(|m| m.is_heaped()) {
                return Err(Error::Domain(format!("{m} needs the heaping design")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Domain("no methods requested".into()));
        }
        Ok(())
    }

    /// Reported (method, weight treatment) rows, in output order.
    pub fn rows(&self) -> Vec<(Method, WeightTreatment)> {
        let mut rows = Vec::new();
        for &m in Method::ALL.iter().filter(|m| self.methods.contains(m)) {
            if !self.misspec.reports(m) {
                continue;
            }
            match m {
                Method::Iptw | Method::IptwHeap => {
                    rows.push((m, WeightTreatment::Fixed));
                    rows.push((m, WeightTreatment::Estimated));
                }
                Method::Pg | Method::PgHeap => rows.push((m, WeightTreatment::NotApplicable)),
                Method::Dr | Method::DrHeap => rows.push((m, WeightTreatment::Estimated)),
            }
        }
        rows
    }

    /// Marginal family of the weighted heaped model.
    fn marginal_family(&self) -> Family {
        Family::NegBin
    }
}

/// Summary of one (method, weight treatment) row of a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub scenario: String,
    pub family: String,
    pub misspec: String,
    pub method: String,
    pub weight_treatment: String,
    pub bias_pct: f64,
    /// Median estimated standard error.
    pub mse: f64,
    /// Standard deviation of the point estimates; absent with one replication.
    pub ese: Option<f64>,
    pub ser: Option<f64>,
    pub coverage_pct: f64,
    pub nonconv_pct: f64,
    pub reps_used: usize,
}

/// Point estimate, standard error and coverage of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepOutcome {
    pub cmr: f64,
    pub se: f64,
    pub covered: bool,
}

/// Estimates of every reported row for one simulated dataset, `None` where
/// the estimator failed.
pub fn run_replication(scenario: &SimScenario, sim: &SimData) -> Vec<Option<RepOutcome>> {
    let truth = scenario.design.true_cmr();
    let data = &sim.data;
    let level = scenario.level;
    let family = scenario.family;
    let rows = scenario.rows();
    let needs = |pred: fn(Method) -> bool| rows.iter().any(|(m, _)| pred(*m));

    let weight_design = apply_misspec(scenario.design, family, scenario.misspec, Role::Weight);
    let outcome_design = apply_misspec(scenario.design, family, scenario.misspec, Role::Outcome);
    let prop = if needs(Method::uses_weights) {
        PropensityFit::fit(data, &weight_design).ok()
    } else {
        None
    };
    let outcome = if needs(|m| matches!(m, Method::Pg | Method::Dr)) {
        fit_count(data, family, &outcome_design, None).ok()
    } else {
        None
    };

    let outcome_of = |est: Result<CmrEstimate>| -> Option<RepOutcome> {
        let est = est.ok()?;
        (est.cmr.is_finite() && est.se.is_finite()).then(|| RepOutcome {
            cmr: est.cmr,
            se: est.se,
            covered: est.covers(truth),
        })
    };

    let mut heaped_marginal = None;
    rows.iter()
        .map(|&(method, treatment)| {
            let missing = || Error::Estimation("component model failed".into());
            match method {
                Method::Iptw => outcome_of(prop.as_ref().ok_or_else(missing).and_then(|p| cmr_iptw(data, p, treatment, level))),
                Method::Pg => outcome_of(outcome.as_ref().ok_or_else(missing).and_then(|o| cmr_pg(data, o, level))),
                Method::Dr => outcome_of(
                    prop.as_ref()
                        .zip(outcome.as_ref())
                        .ok_or_else(missing)
                        .and_then(|(p, o)| cmr_dr(data, p, o, level)),
                ),
                Method::IptwHeap => {
                    let prop = prop.as_ref()?;
                    if heaped_marginal.is_none() {
                        heaped_marginal =
                            Some(fit_iptw_heap_marginal(data, prop, scenario.marginal_family(), HEAPING_SPEC.eta).ok());
                    }
                    let fit = heaped_marginal.as_ref().and_then(Option::as_ref)?;
                    outcome_of(cmr_iptw_heap_from_fit(data, prop, fit, treatment, level))
                }
                Method::PgHeap => outcome_of(
                    fit_heaped(data, family, &outcome_design, HEAPING_SPEC.eta, PiMode::Free, None)
                        .and_then(|o| cmr_pg(data, &o, level)),
                ),
                Method::DrHeap => outcome_of(prop.as_ref().ok_or_else(missing).and_then(|p| {
                    let o = fit_dr_heap_outcome(data, p, family, &outcome_design, HEAPING_SPEC.eta)?;
                    cmr_dr_heap_from_fit(data, p, &o, RhatPrediction::default(), level)
                })),
            }
        })
        .collect()
}

/// Simulated dataset of replication `rep`.
pub fn replicate_data(scenario: &SimScenario, rep: usize) -> SimData {
    let seed = scenario.base_seed.wrapping_add(rep as u64);
    match scenario.design {
        Design::Partners => gen_partners(scenario.n, scenario.family, seed),
        Design::Heaping => gen_heaping(scenario.n, seed),
    }
}

/// Runs every replication in parallel and summarizes each reported row.
/// Replication `r` uses seed `base_seed + r`; results are merged in
/// replication order, so output does not depend on scheduling.
pub fn run_study(scenario: &SimScenario) -> Result<Vec<SimMetrics>> {
    scenario.validate()?;
    let per_rep: Vec<Vec<Option<RepOutcome>>> = (0..scenario.reps)
        .into_par_iter()
        .map(|r| run_replication(scenario, &replicate_data(scenario, r)))
        .collect();
    let rows = scenario.rows();
    Ok(rows
        .iter()
        .enumerate()
        .map(|(k, &(method, treatment))| {
            let outcomes: Vec<RepOutcome> = per_rep.iter().filter_map(|r| r[k]).collect();
            summarize(scenario, method, treatment, &outcomes)
        })
        .collect())
}

/// Metrics over the replications in which an estimator succeeded.
pub fn summarize(scenario: &SimScenario, method: Method, treatment: WeightTreatment, outcomes: &[RepOutcome]) -> SimMetrics {
    let truth = scenario.design.true_cmr();
    let used = outcomes.len();
    let nan_if_empty = |v: f64| if used == 0 { f64::NAN } else { v };
    let mean = outcomes.iter().map(|o| o.cmr).sum::<f64>() / used as f64;
    let mut ses: Vec<f64> = outcomes.iter().map(|o| o.se).collect();
    ses.sort_by(f64::total_cmp);
    let median_se = if used == 0 {
        f64::NAN
    } else if used % 2 == 1 {
        ses[used / 2]
    } else {
        0.5 * (ses[used / 2 - 1] + ses[used / 2])
    };
    let ese = (used > 1).then(|| {
        let ss: f64 = outcomes.iter().map(|o| (o.cmr - mean).powi(2)).sum();
        (ss / (used - 1) as f64).sqrt()
    });
    let covered = outcomes.iter().filter(|o| o.covered).count();
    SimMetrics {
        scenario: scenario.design.name().into(),
        family: scenario.family.name().into(),
        misspec: scenario.misspec.name().into(),
        method: method.name().into(),
        weight_treatment: treatment.name().into(),
        bias_pct: nan_if_empty(100.0 * (mean - truth) / truth),
        mse: median_se,
        ese,
        ser: ese.map(|e| median_se / e),
        coverage_pct: nan_if_empty(100.0 * covered as f64 / used as f64),
        nonconv_pct: 100.0 * (scenario.reps - used) as f64 / scenario.reps as f64,
        reps_used: used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspecified_designs() {
        let w = apply_misspec(Design::Partners, Family::Poisson, Misspec::Mw, Role::Weight);
        assert_eq!(w.mean_covariates, vec!["L1", "L3"]);
        let o = apply_misspec(Design::Heaping, Family::Poisson, Misspec::Mo, Role::Outcome);
        assert_eq!(o.mean_covariates, vec!["L5"]);
        assert!(o.include_exposure);
        let none = apply_misspec(Design::Partners, Family::Zip, Misspec::None, Role::Outcome);
        assert_eq!(none.mean_covariates, vec!["L1", "L2", "L3"]);
        assert_eq!(none.susceptibility_covariates, vec!["L1", "L2", "L3"]);
        let mo = apply_misspec(Design::Partners, Family::Zip, Misspec::Mo, Role::Outcome);
        assert_eq!(mo.susceptibility_covariates, vec!["L1", "L3"]);
        assert!("prior".parse::<Role>().is_err());
    }

    #[test]
    fn rows_per_regime() {
        let mut s = SimScenario::partners(Family::Poisson, Misspec::None, 100, 1, 0);
        assert_eq!(s.rows().len(), 4);
        s.misspec = Misspec::Mw;
        let names: Vec<_> = s.rows().iter().map(|(m, t)| format!("{m}/{t}")).collect();
        assert_eq!(names, ["IPTW/fixed", "IPTW/estimated", "DR/estimated"]);
        s.misspec = Misspec::Mo;
        assert_eq!(s.rows(), vec![(Method::Pg, WeightTreatment::NotApplicable), (Method::Dr, WeightTreatment::Estimated)]);
        s.misspec = Misspec::Mb;
        assert_eq!(s.rows(), vec![(Method::Dr, WeightTreatment::Estimated)]);
        assert_eq!(SimScenario::heaping(Misspec::None, 100, 1, 0).rows().len(), 8);
    }

    #[test]
    fn single_replication_has_no_empirical_se() {
        let s = SimScenario::partners(Family::Poisson, Misspec::None, 400, 1, 3);
        let rows = run_study(&s).unwrap();
        for r in rows {
            assert_eq!(r.reps_used, 1);
            assert!(r.ese.is_none() && r.ser.is_none());
            assert!(r.mse > 0.0);
        }
    }

    #[test]
    fn study_is_deterministic() {
        let s = SimScenario::heaping(Misspec::None, 300, 4, 21);
        let a = run_study(&s).unwrap();
        let b = run_study(&s).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
