//! In-memory datasets and design-matrix construction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Observations of a binary exposure, a count outcome and named numeric
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    exposure_name: String,
    outcome_name: String,
    exposure: Vec<u8>,
    outcome: Vec<u64>,
    columns: Vec<(String, Vec<f64>)>,
}

impl Dataset {
    pub fn new(exposure: Vec<u8>, outcome: Vec<u64>) -> Result<Self> {
        Self::with_names("A", "Y", exposure, outcome)
    }

    pub fn with_names(
        exposure_name: &str,
        outcome_name: &str,
        exposure: Vec<u8>,
        outcome: Vec<u64>,
    ) -> Result<Self> {
        if exposure.is_empty() {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if exposure.len() != outcome.len() {
            return Err(Error::Dimension(format!(
                "{} exposure values but {} outcome values",
                exposure.len(),
                outcome.len()
            )));
        }
        if let Some((row, a)) = exposure.iter().enumerate().find(|(_, &a)| a > 1) {
            return Err(Error::Data(format!(
                "exposure `{exposure_name}` must be 0 or 1, got {a} on row {}",
                row + 1
            )));
        }
        Ok(Self {
            exposure_name: exposure_name.to_string(),
            outcome_name: outcome_name.to_string(),
            exposure,
            outcome,
            columns: Vec::new(),
        })
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.add_column(name, values)?;
        Ok(self)
    }

    pub fn add_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n() {
            return Err(Error::Dimension(format!(
                "column `{name}` has {} values, dataset has {} rows",
                values.len(),
                self.n()
            )));
        }
        if name == self.exposure_name || name == self.outcome_name || name == INTERCEPT {
            return Err(Error::Data(format!("column name `{name}` is reserved")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("column `{name}` has a non-finite value on row {}", i + 1)));
        }
        match self.columns.iter_mut().find(|(n, _)| n == name) {
            Some((_, existing)) => *existing = values,
            None => self.columns.push((name.to_string(), values)),
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.exposure.len()
    }

    pub fn exposure(&self) -> &[u8] {
        &self.exposure
    }

    pub fn outcome(&self) -> &[u64] {
        &self.outcome
    }

    pub fn exposure_name(&self) -> &str {
        &self.exposure_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Same covariates and exposure with a different outcome vector.
    pub fn with_outcome(&self, outcome: Vec<u64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::Dimension("replacement outcome has the wrong length".into()));
        }
        Ok(Self { outcome, ..self.clone() })
    }

    /// Rows selected by index, in the given order (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            exposure_name: self.exposure_name.clone(),
            outcome_name: self.outcome_name.clone(),
            exposure: rows.iter().map(|&i| self.exposure[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, v)| (n.clone(), rows.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    pub fn exposure_share(&self) -> f64 {
        self.exposure.iter().map(|&a| a as f64).sum::<f64>() / self.n() as f64
    }
}

/// Exposure value used when building a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureSetting {
    Observed,
    Set(u8),
}

/// Predictor specification for a regression model. An intercept is always
/// the first column.
///
/// Covariate names resolve against dataset columns, then `extra_columns`.
/// Naming the dataset's exposure column in either list puts the exposure in
/// that part of the model; `include_exposure` appends it to the mean part.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignSpec {
    pub mean_covariates: Vec<String>,
    pub susceptibility_covariates: Vec<String>,
    pub include_exposure: bool,
    pub extra_columns: Vec<(String, Vec<f64>)>,
}

impl DesignSpec {
    pub fn new<S: AsRef<str>>(mean_covariates: &[S]) -> Self {
        Self {
            mean_covariates: mean_covariates.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn with_exposure(mut self) -> Self {
        self.include_exposure = true;
        self
    }

    pub fn with_susceptibility<S: AsRef<str>>(mut self, covariates: &[S]) -> Self {
        self.susceptibility_covariates = covariates.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    /// Adds a numeric column and appends it to the mean covariates.
    pub fn with_extra_mean_column(mut self, name: &str, values: Vec<f64>) -> Self {
        self.extra_columns.retain(|(n, _)| n != name);
        self.extra_columns.push((name.to_string(), values));
        if !self.mean_covariates.iter().any(|c| c == name) {
            self.mean_covariates.push(name.to_string());
        }
        self
    }

    pub fn mean_names(&self, data: &Dataset) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.mean_covariates.iter().cloned());
        if self.include_exposure {
            names.push(data.exposure_name().to_string());
        }
        names
    }

    pub fn susceptibility_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(self.susceptibility_covariates.iter().cloned());
        names
    }

    pub fn mean_matrix(&self, data: &Dataset, exposure: ExposureSetting) -> Result<DMatrix<f64>> {
        self.build(data, &self.mean_names(data), exposure)
    }

    pub fn susceptibility_matrix(&self, data: &Dataset, exposure: ExposureSetting) -> Result<DMatrix<f64>> {
        self.build(data, &self.susceptibility_names(), exposure)
    }

    /// Checks that every referenced name resolves.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        for name in self.mean_covariates.iter().chain(&self.susceptibility_covariates) {
            self.resolve(data, name)?;
        }
        Ok(())
    }

    fn resolve<'a>(&'a self, data: &'a Dataset, name: &str) -> Result<Option<&'a [f64]>> {
        if name == data.exposure_name() {
            return Ok(None);
        }
        if let Ok(col) = data.column(name) {
            return Ok(Some(col));
        }
        match self.extra_columns.iter().find(|(n, _)| n == name) {
            Some((_, v)) if v.len() == data.n() => Ok(Some(v.as_slice())),
            Some(_) => Err(Error::Dimension(format!("extra column `{name}` does not match the dataset length"))),
            None => Err(Error::UnknownColumn(name.to_string())),
        }
    }

    fn build(&self, data: &Dataset, names: &[String], exposure: ExposureSetting) -> Result<DMatrix<f64>> {
        let n = data.n();
        let mut x = DMatrix::zeros(n, names.len());
        for (j, name) in names.iter().enumerate() {
            if j == 0 {
                x.column_mut(0).fill(1.0);
                continue;
            }
            match self.resolve(data, name)? {
                Some(values) => x.column_mut(j).copy_from_slice(values),
                None => match exposure {
                    ExposureSetting::Observed => {
                        for (i, &a) in data.exposure().iter().enumerate() {
                            x[(i, j)] = a as f64;
                        }
                    }
                    ExposureSetting::Set(a) => x.column_mut(j).fill(a as f64),
                },
            }
        }
        Ok(x)
    }
}

/// Errors when the columns of `x` are linearly dependent.
pub(crate) fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    if x.nrows() < x.ncols() {
        return Err(Error::RankDeficient(format!(
            "{} rows for {} predictors",
            x.nrows(),
            x.ncols()
        )));
    }
    // Scale columns so the condition number reflects collinearity rather
    // than units.
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > max * 1e-9) {
        let svd = scaled.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let involved: Vec<&str> = v_t
            .row(k)
            .iter()
            .zip(names)
            .filter(|(v, _)| v.abs() > 0.1)
            .map(|(_, n)| n.as_str())
            .collect();
        return Err(Error::RankDeficient(format!("collinear columns: {}", involved.join(", "))));
    }
    Ok(())
}
