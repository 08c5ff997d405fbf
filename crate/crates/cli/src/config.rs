//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! ```toml
//! ci_level = 0.95
//! methods = ["IPTW", "PG", "DR"]
//!
//! [estimate]
//! input = "cohort.csv"
//! exposure = "A"
//! outcome = "Y"
//! family = "auto"
//! weight_covariates = ["L1", "L2"]
//! outcome_covariates = ["L1", "L2"]
//! susceptibility_covariates = []
//! marginal_family = "negbin"
//! weight_treatment = "estimated"
//! output = "report.json"
//!
//! [heaping]
//! enabled = true
//! eta = 10
//!
//! [simulate]
//! design = "partners"
//! families = ["poisson"]
//! misspec = ["none"]
//! n = 800
//! reps = 2000
//! seed = 20240101
//! output = "metrics.csv"
//! figures = "figures"
//! ```
//!
//! Unknown keys are rejected. Defaults: `ci_level = 0.95`,
//! `weight_treatment = "estimated"`, heaping off, `family = "auto"`.

use std::path::{Path, PathBuf};

use cmr_core::simulate::{Design, Misspec, HEAPING_SPEC};
use cmr_core::{Family, Method, WeightTreatment};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 20240101;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ci_level: Option<f64>,
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub heaping: HeapingSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub input: Option<PathBuf>,
    pub exposure: Option<String>,
    pub outcome: Option<String>,
    pub family: Option<String>,
    pub weight_covariates: Option<Vec<String>>,
    pub outcome_covariates: Option<Vec<String>>,
    pub susceptibility_covariates: Option<Vec<String>>,
    pub marginal_family: Option<String>,
    pub weight_treatment: Option<String>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeapingSection {
    pub enabled: Option<bool>,
    pub eta: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub design: Option<String>,
    pub families: Option<Vec<String>>,
    pub misspec: Option<Vec<String>>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub figures: Option<PathBuf>,
    pub sample_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Flag values; each one present replaces the file's setting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub ci_level: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub family: Option<Vec<String>>,
    pub heaping: bool,
    pub eta: Option<u64>,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub exposure: Option<String>,
    pub outcome: Option<String>,
    pub weight_covariates: Option<Vec<String>>,
    pub outcome_covariates: Option<Vec<String>>,
    pub susceptibility_covariates: Option<Vec<String>>,
    pub weight_treatment: Option<String>,
    pub design: Option<String>,
    pub misspec: Option<Vec<String>>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub figures: Option<PathBuf>,
    pub sample_data: Option<PathBuf>,
}

/// Family choice for the outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    /// Fit every family and keep the one with the smallest AIC.
    Auto,
    Fixed(Family),
}

impl FamilyChoice {
    pub fn name(self) -> &'static str {
        match self {
            FamilyChoice::Auto => "auto",
            FamilyChoice::Fixed(f) => f.name(),
        }
    }
}

impl Serialize for FamilyChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Fully resolved settings of an `estimate` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSettings {
    pub input: PathBuf,
    pub exposure: String,
    pub outcome: String,
    pub family: FamilyChoice,
    pub weight_covariates: Vec<String>,
    pub outcome_covariates: Vec<String>,
    pub susceptibility_covariates: Vec<String>,
    pub marginal_family: Family,
    pub weight_treatment: WeightTreatment,
    pub methods: Vec<Method>,
    /// Grid width when heaping is modelled.
    pub eta: Option<u64>,
    pub ci_level: f64,
    pub output: Option<PathBuf>,
}

/// Fully resolved settings of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSettings {
    pub design: Design,
    pub families: Vec<Family>,
    pub misspec: Vec<Misspec>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub ci_level: f64,
    pub output: Option<PathBuf>,
    pub figures: Option<PathBuf>,
    pub sample_data: Option<PathBuf>,
}

fn config_err(e: cmr_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn parse_list<T: std::str::FromStr<Err = cmr_core::Error>>(items: &[String]) -> CliResult<Vec<T>> {
    items.iter().map(|s| s.parse().map_err(config_err)).collect()
}

fn check_level(level: f64) -> CliResult<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(CliError::Config(format!("ci_level must lie in (0, 1), got {level}")))
    }
}

/// Heaping is on when the file or the `--heaping` flag enables it. A grid
/// width without heaping is an error, as is a width below 1.
fn resolve_heaping(cfg: &HeapingSection, ov: &Overrides) -> CliResult<Option<u64>> {
    let enabled = ov.heaping || cfg.enabled.unwrap_or(false);
    let eta = ov.eta.or(cfg.eta);
    match (enabled, eta) {
        (false, Some(_)) => Err(CliError::Config("a grid width (eta) was given but heaping is off".into())),
        (false, None) => Ok(None),
        (true, Some(0)) => Err(CliError::Config("grid width eta must be at least 1".into())),
        (true, eta) => Ok(Some(eta.unwrap_or(HEAPING_SPEC.eta))),
    }
}

pub fn resolve_estimate(cfg: &RunConfig, ov: &Overrides) -> CliResult<EstimateSettings> {
    let sec = &cfg.estimate;
    let input = ov
        .input
        .clone()
        .or_else(|| sec.input.clone())
        .ok_or_else(|| CliError::Config("no input file given".into()))?;
    let eta = resolve_heaping(&cfg.heaping, ov)?;
    let family = match ov.family.as_deref().map(<[String]>::to_vec).or_else(|| sec.family.clone().map(|f| vec![f])) {
        None => FamilyChoice::Auto,
        Some(list) if list.len() == 1 && list[0].eq_ignore_ascii_case("auto") => FamilyChoice::Auto,
        Some(list) if list.len() == 1 => FamilyChoice::Fixed(list[0].parse().map_err(config_err)?),
        Some(_) => return Err(CliError::Config("estimate takes a single family".into())),
    };
    let methods = match ov.methods.as_ref().or(cfg.methods.as_ref()) {
        Some(list) => parse_list::<Method>(list)?,
        None if eta.is_some() => vec![Method::IptwHeap, Method::PgHeap, Method::DrHeap],
        None => vec![Method::Iptw, Method::Pg, Method::Dr],
    };
    if methods.is_empty() {
        return Err(CliError::Config("no methods requested".into()));
    }
    if eta.is_none() {
        if let Some(m) = methods.iter().find(|m| m.is_heaped()) {
            return Err(CliError::Config(format!("{m} needs heaping enabled")));
        }
    }
    let weight_treatment = match ov.weight_treatment.as_ref().or(sec.weight_treatment.as_ref()) {
        Some(s) => s.parse().map_err(config_err)?,
        None => WeightTreatment::Estimated,
    };
    if weight_treatment == WeightTreatment::NotApplicable {
        return Err(CliError::Config("weight_treatment must be `fixed` or `estimated`".into()));
    }
    let marginal_family = match &sec.marginal_family {
        Some(s) => s.parse().map_err(config_err)?,
        None => Family::NegBin,
    };
    let pick = |flag: &Option<Vec<String>>, file: &Option<Vec<String>>| flag.clone().or_else(|| file.clone()).unwrap_or_default();
    Ok(EstimateSettings {
        input,
        exposure: ov.exposure.clone().or_else(|| sec.exposure.clone()).unwrap_or_else(|| "A".into()),
        outcome: ov.outcome.clone().or_else(|| sec.outcome.clone()).unwrap_or_else(|| "Y".into()),
        family,
        weight_covariates: pick(&ov.weight_covariates, &sec.weight_covariates),
        outcome_covariates: pick(&ov.outcome_covariates, &sec.outcome_covariates),
        susceptibility_covariates: pick(&ov.susceptibility_covariates, &sec.susceptibility_covariates),
        marginal_family,
        weight_treatment,
        methods,
        eta,
        ci_level: check_level(ov.ci_level.or(cfg.ci_level).unwrap_or(DEFAULT_CI_LEVEL))?,
        output: ov.output.clone().or_else(|| sec.output.clone()),
    })
}

pub fn resolve_simulate(cfg: &RunConfig, ov: &Overrides) -> CliResult<SimulateSettings> {
    let sec = &cfg.simulate;
    let heaping = resolve_heaping(&cfg.heaping, ov)?;
    let design = match ov.design.as_ref().or(sec.design.as_ref()) {
        Some(s) => s.parse().map_err(config_err)?,
        None if heaping.is_some() => Design::Heaping,
        None => Design::Partners,
    };
    match (design, heaping) {
        (Design::Partners, Some(_)) => {
            return Err(CliError::Config("the partners design has no heaping; use design = \"heaping\"".into()))
        }
        (Design::Heaping, Some(eta)) if eta != HEAPING_SPEC.eta => {
            return Err(CliError::Config(format!("the heaping design uses eta = {}", HEAPING_SPEC.eta)))
        }
        _ => {}
    }
    let families = match ov.family.as_ref().or(sec.families.as_ref()) {
        Some(list) => parse_list::<Family>(list)?,
        None => vec![Family::Poisson],
    };
    if design == Design::Heaping && families.iter().any(|&f| f != Family::Poisson) {
        return Err(CliError::Config("the heaping design is generated from a Poisson model".into()));
    }
    let misspec = match ov.misspec.as_ref().or(sec.misspec.as_ref()) {
        Some(list) if list.len() == 1 && list[0].eq_ignore_ascii_case("all") => Misspec::ALL.to_vec(),
        Some(list) => parse_list::<Misspec>(list)?,
        None => vec![Misspec::None],
    };
    let methods = match ov.methods.as_ref().or(cfg.methods.as_ref()) {
        Some(list) => parse_list::<Method>(list)?,
        None => design.default_methods(),
    };
    let n = ov.n.or(sec.n).unwrap_or(800);
    let reps = ov.reps.or(sec.reps).unwrap_or(2000);
    if n == 0 || reps == 0 {
        return Err(CliError::Config("n and reps must be positive".into()));
    }
    if families.is_empty() || misspec.is_empty() || methods.is_empty() {
        return Err(CliError::Config("families, misspec and methods must be non-empty".into()));
    }
    if design == Design::Partners {
        if let Some(m) = methods.iter().find(|m| m.is_heaped()) {
            return Err(CliError::Config(format!("{m} needs the heaping design")));
        }
    }
    Ok(SimulateSettings {
        design,
        families,
        misspec,
        n,
        reps,
        seed: ov.seed.or(sec.seed).unwrap_or(DEFAULT_SEED),
        methods,
        ci_level: check_level(ov.ci_level.or(cfg.ci_level).unwrap_or(DEFAULT_CI_LEVEL))?,
        output: ov.output.clone().or_else(|| sec.output.clone()),
        figures: ov.figures.clone().or_else(|| sec.figures.clone()),
        sample_data: ov.sample_data.clone().or_else(|| sec.sample_data.clone()),
    })
}
