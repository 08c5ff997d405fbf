//! The `estimate` command: fits the nuisance models, runs every requested
//! estimator and assembles the report.

use cmr_core::estimators::{cmr_dr_heap_from_fit, cmr_iptw_heap_from_fit, fit_dr_heap_outcome, fit_iptw_heap_marginal};
use cmr_core::{
    cmr_dr, cmr_iptw, cmr_pg, fit_count, fit_heaped, CmrEstimate, Dataset, DesignSpec, Family, FitResult, Method,
    OutcomeFit, PiMode, PropensityFit, RhatPrediction,
};
use serde::Serialize;

use crate::config::{EstimateSettings, FamilyChoice};
use crate::error::CliResult;
use crate::ingest::{ingest_csv, ColumnSpec};

/// Fit summary of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub family: Option<Family>,
    pub loglik: f64,
    pub aic: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Exact-report probability of a heaped fit.
    pub pi: Option<f64>,
    pub dispersion: Option<f64>,
    pub coefficients: Vec<Coefficient>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
}

impl ModelDiagnostics {
    pub fn from_fit(fit: &FitResult, family: Option<Family>) -> Self {
        Self {
            family,
            loglik: fit.loglik,
            aic: fit.aic().ok(),
            converged: fit.converged,
            iterations: fit.iterations,
            pi: fit.pi,
            dispersion: fit.dispersion,
            coefficients: fit
                .names
                .iter()
                .zip(&fit.estimates)
                .map(|(name, &estimate)| Coefficient { name: name.clone(), estimate })
                .collect(),
            warnings: fit.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicEntry {
    pub family: Family,
    pub aic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySelection {
    pub requested: FamilyChoice,
    pub selected: Option<Family>,
    /// AIC of every candidate; empty unless the family was chosen by AIC.
    pub candidates: Vec<AicEntry>,
}

/// Outcome of one requested method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub status: &'static str,
    pub estimate: Option<CmrEstimate>,
    pub error: Option<String>,
    /// Outcome model the estimate used, when it fits one of its own.
    pub model: Option<ModelDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub settings: EstimateSettings,
    pub n: usize,
    pub n_exposed: usize,
    pub family_selection: FamilySelection,
    pub propensity_model: Option<ModelDiagnostics>,
    pub outcome_model: Option<ModelDiagnostics>,
    pub estimates: Vec<MethodResult>,
}

impl EstimateReport {
    pub fn failures(&self) -> usize {
        self.estimates.iter().filter(|r| r.estimate.is_none()).count()
    }
}

fn required_columns(s: &EstimateSettings) -> ColumnSpec {
    let mut covariates: Vec<String> = Vec::new();
    for c in s
        .weight_covariates
        .iter()
        .chain(&s.outcome_covariates)
        .chain(&s.susceptibility_covariates)
    {
        if *c != s.exposure && *c != s.outcome && !covariates.contains(c) {
            covariates.push(c.clone());
        }
    }
    ColumnSpec {
        exposure: s.exposure.clone(),
        outcome: s.outcome.clone(),
        covariates,
    }
}

pub fn run_estimate(settings: &EstimateSettings) -> CliResult<EstimateReport> {
    let data = ingest_csv(&settings.input, &required_columns(settings))?;
    Ok(estimate_dataset(&data, settings))
}

/// Fits an outcome model, heaped when a grid width is given.
fn fit_outcome(data: &Dataset, family: Family, design: &DesignSpec, eta: Option<u64>) -> cmr_core::Result<OutcomeFit> {
    match eta {
        Some(eta) => fit_heaped(data, family, design, eta, PiMode::Free, None),
        None => fit_count(data, family, design, None),
    }
}

fn select_family(data: &Dataset, choice: FamilyChoice, design: &DesignSpec, eta: Option<u64>) -> FamilySelection {
    if let FamilyChoice::Fixed(f) = choice {
        return FamilySelection {
            requested: choice,
            selected: Some(f),
            candidates: Vec::new(),
        };
    }
    let candidates: Vec<AicEntry> = Family::ALL
        .iter()
        .map(|&f| match fit_outcome(data, f, design, eta).and_then(|o| o.fit.aic()) {
            Ok(aic) => AicEntry { family: f, aic: Some(aic), error: None },
            Err(e) => AicEntry { family: f, aic: None, error: Some(e.to_string()) },
        })
        .collect();
    let selected = candidates
        .iter()
        .filter_map(|c| c.aic.map(|a| (c.family, a)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(f, _)| f);
    FamilySelection {
        requested: choice,
        selected,
        candidates,
    }
}

/// Runs every requested method on an in-memory dataset. Failures are
/// recorded per method and never abort the others.
pub fn estimate_dataset(data: &Dataset, s: &EstimateSettings) -> EstimateReport {
    let level = s.ci_level;
    let weight_design = DesignSpec::new(&s.weight_covariates);
    let outcome_design = DesignSpec::new(&s.outcome_covariates)
        .with_exposure()
        .with_susceptibility(&s.susceptibility_covariates);
    let needs_outcome = s.methods.iter().any(|m| m.uses_outcome_model());
    let needs_weights = s.methods.iter().any(|m| m.uses_weights());

    let selection = if needs_outcome {
        select_family(data, s.family, &outcome_design, s.eta)
    } else {
        FamilySelection {
            requested: s.family,
            selected: None,
            candidates: Vec::new(),
        }
    };
    let family = selection.selected;
    let no_family = || "no outcome family could be fitted".to_string();

    let prop = needs_weights.then(|| PropensityFit::fit(data, &weight_design).map_err(|e| e.to_string()));
    let plain = s
        .methods
        .iter()
        .any(|m| matches!(m, Method::Pg | Method::Dr))
        .then(|| {
            family
                .ok_or_else(no_family)
                .and_then(|f| fit_count(data, f, &outcome_design, None).map_err(|e| e.to_string()))
        });

    let propensity_model = prop
        .as_ref()
        .and_then(|p| p.as_ref().ok())
        .and_then(|p| p.fit.as_ref())
        .map(|f| ModelDiagnostics::from_fit(f, None));
    let outcome_model = plain
        .as_ref()
        .and_then(|o| o.as_ref().ok())
        .map(|o| ModelDiagnostics::from_fit(&o.fit, Some(o.family)));

    let get_prop = || -> Result<&PropensityFit, String> {
        match &prop {
            Some(Ok(p)) => Ok(p),
            Some(Err(e)) => Err(format!("propensity model: {e}")),
            None => Err("propensity model not fitted".into()),
        }
    };
    let get_plain = || -> Result<&OutcomeFit, String> {
        match &plain {
            Some(Ok(o)) => Ok(o),
            Some(Err(e)) => Err(format!("outcome model: {e}")),
            None => Err("outcome model not fitted".into()),
        }
    };
    let eta = || s.eta.ok_or_else(|| "heaping is off".to_string());

    let estimates = s
        .methods
        .iter()
        .map(|&method| {
            let mut model = None;
            let result: Result<CmrEstimate, String> = match method {
                Method::Iptw => get_prop().and_then(|p| cmr_iptw(data, p, s.weight_treatment, level).map_err(|e| e.to_string())),
                Method::Pg => get_plain().and_then(|o| cmr_pg(data, o, level).map_err(|e| e.to_string())),
                Method::Dr => get_prop()
                    .and_then(|p| get_plain().map(|o| (p, o)))
                    .and_then(|(p, o)| cmr_dr(data, p, o, level).map_err(|e| e.to_string())),
                Method::IptwHeap => get_prop().and_then(|p| {
                    let eta = eta()?;
                    let fit = fit_iptw_heap_marginal(data, p, s.marginal_family, eta).map_err(|e| e.to_string())?;
                    model = Some(ModelDiagnostics::from_fit(&fit.fit, Some(fit.family)));
                    cmr_iptw_heap_from_fit(data, p, &fit, s.weight_treatment, level).map_err(|e| e.to_string())
                }),
                Method::PgHeap => {
                    let fam = family.ok_or_else(no_family);
                    fam.and_then(|f| {
                        let fit = fit_heaped(data, f, &outcome_design, eta()?, PiMode::Free, None).map_err(|e| e.to_string())?;
                        model = Some(ModelDiagnostics::from_fit(&fit.fit, Some(f)));
                        cmr_pg(data, &fit, level).map_err(|e| e.to_string())
                    })
                }
                Method::DrHeap => get_prop().and_then(|p| {
                    let f = family.ok_or_else(no_family)?;
                    let fit = fit_dr_heap_outcome(data, p, f, &outcome_design, eta()?).map_err(|e| e.to_string())?;
                    model = Some(ModelDiagnostics::from_fit(&fit.fit, Some(f)));
                    cmr_dr_heap_from_fit(data, p, &fit, RhatPrediction::default(), level).map_err(|e| e.to_string())
                }),
            };
            match result {
                Ok(est) => MethodResult {
                    method,
                    status: "ok",
                    estimate: Some(est),
                    error: None,
                    model,
                },
                Err(e) => MethodResult {
                    method,
                    status: "failed",
                    estimate: None,
                    error: Some(e),
                    model,
                },
            }
        })
        .collect();

    EstimateReport {
        tool: "cmr",
        version: env!("CARGO_PKG_VERSION"),
        settings: s.clone(),
        n: data.n(),
        n_exposed: data.exposure().iter().filter(|&&a| a == 1).count(),
        family_selection: selection,
        propensity_model,
        outcome_model,
        estimates,
    }
}

